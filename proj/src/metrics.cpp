#include "gpcl/metrics.hpp"

#include <fstream>
#include <iomanip>
#include <string>

#include "gpcl/core.hpp"
#include "gpcl/error.hpp"

namespace gpcl {

ConfusionMatrix::ConfusionMatrix(int class_count)
    : classes_(class_count), counts_(static_cast<std::size_t>(class_count) * static_cast<std::size_t>(class_count), 0) {
    if (class_count < 0) throw InvalidArgument("class count must be nonnegative");
}

std::int64_t ConfusionMatrix::at(int truth, int predicted) const {
    return counts_[static_cast<std::size_t>(truth) * static_cast<std::size_t>(classes_) + static_cast<std::size_t>(predicted)];
}

std::int64_t& ConfusionMatrix::at(int truth, int predicted) {
    return counts_[static_cast<std::size_t>(truth) * static_cast<std::size_t>(classes_) + static_cast<std::size_t>(predicted)];
}

void ConfusionMatrix::accumulate(std::span<const int> truth, std::span<const int> predicted) {
    if (truth.size() != predicted.size()) throw InvalidArgument("truth and prediction lengths differ");
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const int y = truth[i], p = predicted[i];
        if (y == kIgnoreLabel) continue;
        if (y < 0 || y >= classes_) throw InvalidArgument("ground-truth label " + std::to_string(y) + " out of range");
        if (p < 0 || p >= classes_) throw InvalidArgument("predicted label " + std::to_string(p) + " out of range");
        ++at(y, p);
    }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    if (other.classes_ != classes_) throw InvalidArgument("cannot merge confusion matrices of different sizes");
    for (std::size_t k = 0; k < counts_.size(); ++k) counts_[k] += other.counts_[k];
}

std::int64_t ConfusionMatrix::total() const {
    std::int64_t n = 0;
    for (auto c : counts_) n += c;
    return n;
}

SegmentationScores score(const ConfusionMatrix& cm) {
    const int n = cm.class_count();
    SegmentationScores s;
    s.iou.resize(static_cast<std::size_t>(n));
    s.recall.resize(static_cast<std::size_t>(n));
    double iou_sum = 0.0, acc_sum = 0.0;
    int iou_count = 0, acc_count = 0;
    for (int c = 0; c < n; ++c) {
        std::int64_t row = 0, col = 0;
        for (int k = 0; k < n; ++k) {
            row += cm.at(c, k);
            col += cm.at(k, c);
        }
        const std::int64_t tp = cm.at(c, c);
        const std::int64_t uni = row + col - tp;
        if (uni > 0) {
            s.iou[static_cast<std::size_t>(c)] = static_cast<double>(tp) / static_cast<double>(uni);
            iou_sum += *s.iou[static_cast<std::size_t>(c)];
            ++iou_count;
        }
        if (row > 0) {
            s.recall[static_cast<std::size_t>(c)] = static_cast<double>(tp) / static_cast<double>(row);
            acc_sum += *s.recall[static_cast<std::size_t>(c)];
            ++acc_count;
        }
    }
    s.miou = iou_count ? iou_sum / iou_count : 0.0;
    s.macc = acc_count ? acc_sum / acc_count : 0.0;
    return s;
}

double miou(const ConfusionMatrix& cm) { return score(cm).miou; }
double macc(const ConfusionMatrix& cm) { return score(cm).macc; }

void write_class_table(const ConfusionMatrix& cm, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    const auto s = score(cm);
    out << "class,iou,recall,support\n" << std::setprecision(9);
    for (int c = 0; c < cm.class_count(); ++c) {
        std::int64_t support = 0;
        for (int k = 0; k < cm.class_count(); ++k) support += cm.at(c, k);
        out << c << ',';
        if (s.iou[static_cast<std::size_t>(c)]) out << *s.iou[static_cast<std::size_t>(c)];
        out << ',';
        if (s.recall[static_cast<std::size_t>(c)]) out << *s.recall[static_cast<std::size_t>(c)];
        out << ',' << support << '\n';
    }
}

} // namespace gpcl
