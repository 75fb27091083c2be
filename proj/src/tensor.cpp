#include "xmodal/tensor.hpp"

#include "xmodal/errors.hpp"

namespace xmodal {

std::size_t Tensor::element_count(const std::vector<std::size_t>& dims) noexcept {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
}

Tensor::Tensor(std::vector<std::size_t> dims, double fill)
    : shape(std::move(dims)), data(element_count(shape), fill) {}

void ParamSet::add(const std::string& name, Tensor tensor) {
    if (index_.count(name)) throw InvalidInput("duplicate parameter name '" + name + "'");
    index_.emplace(name, names_.size());
    names_.push_back(name);
    tensors_.push_back(std::move(tensor));
}

bool ParamSet::contains(const std::string& name) const { return index_.count(name) != 0; }

Tensor& ParamSet::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvalidInput("unknown parameter '" + name + "'");
    return tensors_[it->second];
}

const Tensor& ParamSet::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvalidInput("unknown parameter '" + name + "'");
    return tensors_[it->second];
}

ParamSet ParamSet::zeros_like() const {
    ParamSet out;
    for (std::size_t i = 0; i < names_.size(); ++i) out.add(names_[i], Tensor(tensors_[i].shape));
    return out;
}

std::size_t ParamSet::scalar_count() const noexcept {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
}

void ParamSet::accumulate(const ParamSet& other) {
    if (other.names_ != names_) throw InvalidInput("parameter layouts differ");
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
        auto& dst = tensors_[i].data;
        const auto& src = other.tensors_[i].data;
        if (dst.size() != src.size()) throw InvalidInput("tensor '" + names_[i] + "' size differs");
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
}

Matrix Matrix::from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) return {};
    Matrix m(rows.size(), rows.front().size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != m.cols()) throw InvalidInput("ragged rows");
        for (std::size_t c = 0; c < m.cols(); ++c) m(r, c) = rows[r][c];
    }
    return m;
}

}  // namespace xmodal
