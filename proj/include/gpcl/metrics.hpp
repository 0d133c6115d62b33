#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace gpcl {

// Rows are ground truth, columns predictions. Ignored points are not counted.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int class_count = 0);

    void accumulate(std::span<const int> truth, std::span<const int> predicted);
    void merge(const ConfusionMatrix& other);

    [[nodiscard]] int class_count() const { return classes_; }
    [[nodiscard]] std::int64_t at(int truth, int predicted) const;
    [[nodiscard]] std::int64_t total() const;
    [[nodiscard]] std::int64_t& at(int truth, int predicted);

    bool operator==(const ConfusionMatrix&) const = default;

private:
    int classes_ = 0;
    std::vector<std::int64_t> counts_;
};

struct SegmentationScores {
    double miou = 0.0;
    double macc = 0.0;
    // nullopt for classes absent from both truth and predictions.
    std::vector<std::optional<double>> iou;
    // nullopt for classes without ground truth.
    std::vector<std::optional<double>> recall;
};

SegmentationScores score(const ConfusionMatrix& cm);
double miou(const ConfusionMatrix& cm);
double macc(const ConfusionMatrix& cm);

// CSV `class,iou,recall,support`; undefined entries are left empty.
void write_class_table(const ConfusionMatrix& cm, const std::filesystem::path& path);

} // namespace gpcl
