#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace xmodal {

/// Dense row-major tensor of doubles.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> dims, double fill = 0.0);

    std::size_t size() const noexcept { return data.size(); }
    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    static std::size_t element_count(const std::vector<std::size_t>& dims) noexcept;

    friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Ordered collection of named tensors. Insertion order is the canonical
/// order used for serialization and optimizer traversal.
class ParamSet {
public:
    void add(const std::string& name, Tensor tensor);

    bool contains(const std::string& name) const;
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;

    std::size_t size() const noexcept { return names_.size(); }
    bool empty() const noexcept { return names_.empty(); }
    const std::vector<std::string>& names() const noexcept { return names_; }
    Tensor& tensor(std::size_t i) { return tensors_[i]; }
    const Tensor& tensor(std::size_t i) const { return tensors_[i]; }

    /// Same names and shapes, all values zero.
    ParamSet zeros_like() const;
    /// Total number of scalars.
    std::size_t scalar_count() const noexcept;
    /// Element-wise accumulate `other` into this set; layouts must match.
    void accumulate(const ParamSet& other);

    friend bool operator==(const ParamSet& a, const ParamSet& b) {
        return a.names_ == b.names_ && a.tensors_ == b.tensors_;
    }

private:
    std::vector<std::string> names_;
    std::vector<Tensor> tensors_;
    std::map<std::string, std::size_t> index_;
};

/// Row-major matrix used for batches of embeddings and spectrograms.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::vector<double>& data() noexcept { return data_; }
    const std::vector<double>& data() const noexcept { return data_; }

    static Matrix from_rows(const std::vector<std::vector<double>>& rows);

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

}  // namespace xmodal
