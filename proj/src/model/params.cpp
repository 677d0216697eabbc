#include <boost/random/mersenne_twister.hpp>
#include <boost/random/normal_distribution.hpp>

#include "plm/error.hpp"
#include "plm/model.hpp"
#include "plm/random.hpp"

namespace plm {
namespace {

constexpr float kInitStddev = 0.02f;

bool ends_with(std::string_view s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

}  // namespace

template <typename T>
BasicTensor<T>& BasicParameterSet<T>::add(std::string name, BasicTensor<T> tensor) {
    if (index_.contains(name)) throw ContractError("parameter '" + name + "' added twice");
    index_.emplace(name, entries_.size());
    entries_.push_back({std::move(name), std::move(tensor)});
    return entries_.back().tensor;
}

template <typename T>
const BasicTensor<T>* BasicParameterSet<T>::find(std::string_view name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &entries_[it->second].tensor;
}

template <typename T>
const BasicTensor<T>& BasicParameterSet<T>::get(std::string_view name) const {
    if (const auto* t = find(name)) return *t;
    throw ContractError("no parameter named '" + std::string(name) + "'");
}

template <typename T>
std::size_t BasicParameterSet<T>::parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.numel();
    return n;
}

template <typename T>
void BasicParameterSet<T>::zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
}

template <typename T>
void BasicParameterSet<T>::set_requires_grad(bool on) {
    for (auto& e : entries_) e.tensor.set_requires_grad(on);
}

template <typename T>
BasicTensor<T> init_tensor(std::string_view name, const Shape& dims, std::uint64_t seed) {
    if (ends_with(name, ".bias") || ends_with(name, ".beta")) return BasicTensor<T>(dims);
    if (ends_with(name, ".gamma")) return BasicTensor<T>::filled(dims, T{1});
    // Draws are made in float so the float and double models share values.
    boost::random::mt19937_64 engine(derive_seed(seed, {hash_name(name)}));
    boost::random::normal_distribution<float> normal(0.0f, kInitStddev);
    BasicTensor<T> t(dims);
    for (T& v : t.data()) v = static_cast<T>(normal(engine));
    return t;
}

template <typename T>
BasicModel<T> init_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    BasicModel<T> model{config, {}};
    model.config.ffn_size = config.ffn();
    model.config.head_hidden = config.head_width();
    for (const auto& [name, dims] : parameter_shapes(config)) {
        model.params.add(name, init_tensor<T>(name, dims, seed)).set_requires_grad();
    }
    return model;
}

template <typename T>
void add_head(BasicModel<T>& model, HeadKind kind, std::uint64_t seed) {
    if (model.config.has_head(kind)) return;
    model.config.heads.push_back(kind);
    const std::string prefix = "head." + std::string(head_name(kind)) + ".";
    for (const auto& [name, dims] : parameter_shapes(model.config)) {
        if (name.starts_with(prefix)) model.params.add(name, init_tensor<T>(name, dims, seed)).set_requires_grad();
    }
}

template <typename To, typename From>
BasicModel<To> cast_model(const BasicModel<From>& model) {
    BasicModel<To> out{model.config, {}};
    for (const auto& e : model.params) {
        const auto src = e.tensor.data();
        std::vector<To> values(src.begin(), src.end());
        out.params.add(e.name, BasicTensor<To>(e.tensor.dims(), std::move(values)))
            .set_requires_grad(e.tensor.requires_grad());
    }
    return out;
}

template class BasicParameterSet<float>;
template class BasicParameterSet<double>;
template BasicTensor<float> init_tensor<float>(std::string_view, const Shape&, std::uint64_t);
template BasicTensor<double> init_tensor<double>(std::string_view, const Shape&, std::uint64_t);
template BasicModel<float> init_model<float>(const ModelConfig&, std::uint64_t);
template BasicModel<double> init_model<double>(const ModelConfig&, std::uint64_t);
template void add_head<float>(BasicModel<float>&, HeadKind, std::uint64_t);
template void add_head<double>(BasicModel<double>&, HeadKind, std::uint64_t);
template BasicModel<double> cast_model<double, float>(const BasicModel<float>&);
template BasicModel<float> cast_model<float, double>(const BasicModel<double>&);
template BasicModel<float> cast_model<float, float>(const BasicModel<float>&);

}  // namespace plm
