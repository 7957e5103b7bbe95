#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "distillseg/layers.hpp"
#include "json.hpp"

namespace distillseg {

enum class NetworkKind { UNet3D, ResidualUNet3D, CascadedUNet3D };
enum class NormKind { Instance, Group, Batch };
enum class ActivationKind { ReLU, LeakyReLU };
enum class UpsamplingKind { Trilinear, TransposedConv };
enum class Mode { Train, Eval };

inline constexpr std::array<NetworkKind, 3> kNetworkKinds{NetworkKind::UNet3D, NetworkKind::ResidualUNet3D,
                                                          NetworkKind::CascadedUNet3D};

std::string kind_name(NetworkKind k);
/// Human-readable row label: "UNet", "Residual UNet", "Cascaded UNet".
std::string kind_label(NetworkKind k);
NetworkKind parse_kind(const std::string& s);

struct NetworkConfig {
    NetworkKind kind = NetworkKind::UNet3D;
    Index base_channels = 8;
    /// Number of resolution levels.
    Index depth = 3;
    NormKind norm = NormKind::Instance;
    Index num_groups = 8;
    ActivationKind activation = ActivationKind::LeakyReLU;
    double leaky_slope = 0.01;
    UpsamplingKind upsampling = UpsamplingKind::Trilinear;
    Index in_channels = 4;
    Index out_regions = 3;
    /// Reserved for a variational auto-encoder regularization branch; must stay false.
    bool vae_branch = false;

    double slope() const { return activation == ActivationKind::LeakyReLU ? leaky_slope : 0.0; }
    /// Feature width at each level: base * 2^level.
    std::vector<Index> widths() const;
    /// Per-modality branch width at each level (cascaded kind).
    std::vector<Index> branch_widths() const;

    bool operator==(const NetworkConfig&) const = default;
};

/// Layer choices per kind: leaky ReLU + instance norm (UNet), ReLU + group
/// norm (Residual), ReLU + instance norm (Cascaded). Desk scale is depth 3,
/// base 8; paper scale depth 5, base 16.
NetworkConfig default_network_config(NetworkKind kind, bool paper_scale = false);

void validate(const NetworkConfig& config);

void to_json(nlohmann::json& j, const NetworkConfig& c);
void from_json(const nlohmann::json& j, NetworkConfig& c);

namespace nn {

/// Transposed convolution with kernel 2 and stride 2 (exact 2x upsampling).
template <typename Scalar>
class TransposedConv2x final : public Module<Scalar> {
public:
    using T = Tensor<Scalar>;

    TransposedConv2x(const std::string& name, Index in_c, Index out_c);
    void init(Rng& rng, double gain);
    T forward(const T& x) override;
    T infer(const T& x) const override;
    T backward(const T& gy) override;
    void collect(std::vector<Parameter<Scalar>*>& out) override;

private:
    Index in_c_, out_c_;
    Parameter<Scalar> weight_, bias_;
    T input_;
};

}  // namespace nn

/// A 3-D encoder-decoder mapping (B, 4, P, P, P) inputs to (B, 3, P, P, P)
/// per-region sigmoid probabilities.
template <typename Scalar>
class Network {
public:
    using T = Tensor<Scalar>;
    using Param = nn::Parameter<Scalar>;

    explicit Network(NetworkConfig config, std::uint64_t seed = 0);
    Network(Network&&) noexcept = default;
    Network& operator=(Network&&) noexcept = default;

    const NetworkConfig& config() const { return config_; }

    /// Training-mode forward; records activations for `backward`.
    T forward(const T& inputs);
    /// Eval-mode forward; pure.
    T predict(const T& inputs) const;
    /// Back-propagates d(loss)/d(probabilities) from the last `forward`,
    /// accumulating parameter gradients.
    void backward(const T& grad_probabilities);

    std::vector<Param*> parameters();
    std::vector<const Param*> parameters() const;
    void zero_grad();
    /// Number of trainable scalars.
    Index parameter_count() const;
    /// Trainable scalars in each per-modality encoder branch (one entry for
    /// single-branch kinds).
    std::vector<Index> branch_parameter_counts() const;
    /// Smallest spatial extent divisor accepted by `forward`.
    Index size_divisor() const { return Index{1} << (config_.depth - 1); }

private:
    void check_input(const T& x) const;
    template <bool Training>
    T run(const T& x);

    NetworkConfig config_;
    // encoders_[branch][level]
    std::vector<std::vector<std::unique_ptr<nn::Sequential<Scalar>>>> encoders_;
    std::vector<std::unique_ptr<nn::Sequential<Scalar>>> fuse_;
    std::vector<std::unique_ptr<nn::Sequential<Scalar>>> up_;
    std::vector<std::unique_ptr<nn::Sequential<Scalar>>> decoders_;
    std::unique_ptr<nn::Conv3d<Scalar>> head_;

    // training-mode caches
    std::vector<Index> skip_channels_;
    std::vector<Shape> skip_shapes_;
    T probabilities_;
};

extern template class Network<float>;
extern template class Network<double>;

using NetworkF = Network<float>;

Network<float> build_unet(const NetworkConfig& config, std::uint64_t seed = 0);
Network<float> build_residual_unet(const NetworkConfig& config, std::uint64_t seed = 0);
Network<float> build_cascaded_unet(const NetworkConfig& config, std::uint64_t seed = 0);
Network<float> build_network(const NetworkConfig& config, std::uint64_t seed = 0);

template <typename Scalar>
Tensor<Scalar> forward(Network<Scalar>& network, const Tensor<Scalar>& inputs, Mode mode) {
    return mode == Mode::Train ? network.forward(inputs) : network.predict(inputs);
}

}  // namespace distillseg
