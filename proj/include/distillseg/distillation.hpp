#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "distillseg/inference.hpp"
#include "distillseg/network.hpp"
#include "distillseg/objectives.hpp"
#include "distillseg/preprocess.hpp"
#include "distillseg/training.hpp"
#include "json.hpp"

namespace distillseg {

enum class Fusion { Average, Majority };

std::string fusion_name(Fusion f);
Fusion parse_fusion(const std::string& s);

struct EnsembleSpec {
    /// Non-owning; members must outlive the spec.
    std::vector<const NetworkF*> members;
    Fusion fusion = Fusion::Average;
    SlidingWindow window;
    /// Binarization threshold each member map goes through under majority fusion.
    double member_threshold = 0.5;
};

void validate(const EnsembleSpec& spec);

/// Voxelwise fusion of member probability maps of identical shape. Average
/// takes the arithmetic mean; majority returns 1 where more than half of the
/// binarized members agree, else 0.
TensorF fuse(std::span<const TensorF> maps, Fusion fusion, double member_threshold = 0.5);

/// (3, D, H, W) ensemble probabilities for one normalized case.
TensorF ensemble_predict(const EnsembleSpec& spec, const MultiModalCase& c);

/// Holds the pool's ground truth privately. Training-side code only sees
/// `view()`; the truth is reachable through `audit_truth`, which counts reads.
class UnlabeledPool {
public:
    explicit UnlabeledPool(std::vector<MultiModalCase> cases);

    const std::vector<MultiModalCase>& view() const { return view_; }
    std::size_t size() const { return view_.size(); }
    const LabelMask& audit_truth(const std::string& id) const;
    std::size_t truth_reads() const { return truth_reads_; }

private:
    std::vector<MultiModalCase> view_;
    std::map<std::string, LabelMask> truth_;
    mutable std::size_t truth_reads_ = 0;
};

struct PseudoLabeledCase {
    MultiModalCase case_data;
    RegionMask region_target;
    double mean_confidence = 0;
    /// Channel-voxels switched off by the nesting repair.
    Index repaired_voxels = 0;
};

/// Top-down repair: WT kept, TC &= WT, ET &= TC. Returns the number of
/// channel-voxels cleared.
Index repair_nesting(Tensor<std::uint8_t>& regions);

/// Mean over all outputs of max(p, 1 - p).
double mean_confidence(const TensorF& probabilities);

std::vector<PseudoLabeledCase> pseudo_label(const EnsembleSpec& spec, std::span<const MultiModalCase> pool,
                                            double threshold = 0.5);

/// Pseudo-label quality against the withheld truth (reads it through the
/// pool's audit channel).
DiceReport audit_pseudo_labels(std::span<const PseudoLabeledCase> pseudo, const UnlabeledPool& pool);

/// Union of original and pseudo-labeled cases, ordered by id.
std::vector<MultiModalCase> build_distill_set(std::span<const MultiModalCase> original,
                                              std::span<const PseudoLabeledCase> pseudo);

/// Trains a fresh student of `student.kind` on the distill set, on a seed
/// stream distinct from the stand-alone run.
TrainedModel distill(const NetworkConfig& student, std::span<const MultiModalCase> distill_set,
                     std::span<const MultiModalCase> val_cases, const TrainConfig& config,
                     TrainOptions options = {});

TrainedModel distill(NetworkKind best_kind, std::span<const MultiModalCase> distill_set,
                     std::span<const MultiModalCase> val_cases, const TrainConfig& config,
                     TrainOptions options = {});

}  // namespace distillseg
