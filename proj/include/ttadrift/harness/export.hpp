#pragma once

// Flat embedding export for external visualization: each sample becomes the
// mean of its three modality-encoder outputs, tagged with its domain.

#include <sstream>
#include <string>
#include <vector>

#include "ttadrift/driftgen.hpp"
#include "ttadrift/harness/report.hpp"
#include "ttadrift/model.hpp"

namespace ttadrift::harness {

// [n x d_h] mean of the modality features.
inline std::vector<std::vector<double>> mean_embeddings(const SourceModel& model, const SyntheticDataset& data) {
    std::vector<std::vector<double>> out;
    const std::size_t d = model.config().d_h;
    for (std::size_t begin = 0; begin < data.size(); begin += 512) {
        const auto batch = data.batch(begin, std::min(data.size(), begin + 512));
        const auto feats = model.encode(batch);
        for (std::size_t i = 0; i < batch.size(); ++i) {
            std::vector<double> row(d, 0.0);
            for (const auto& f : feats)
                for (std::size_t j = 0; j < d; ++j) row[j] += f.at(i, j) / static_cast<double>(kModalities);
            out.push_back(std::move(row));
        }
    }
    return out;
}

struct EmbeddingSet {
    std::string domain;
    const SyntheticDataset* data = nullptr;
};

inline std::string embeddings_csv(const SourceModel& model, const std::vector<EmbeddingSet>& sets) {
    std::ostringstream out;
    out << "domain,index,label,core";
    for (std::size_t j = 0; j < model.config().d_h; ++j) out << ",e" << j;
    out << '\n';
    for (const auto& set : sets) {
        if (set.data->d_in != model.config().d_in) {
            throw CompatibilityError("dataset d_in " + std::to_string(set.data->d_in) + " does not match model d_in " +
                                     std::to_string(model.config().d_in));
        }
        const auto rows = mean_embeddings(model, *set.data);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            out << set.domain << ',' << i << ',' << set.data->labels[i] << ',' << set.data->cores[i];
            for (double x : rows[i]) out << ',' << fmt(x);
            out << '\n';
        }
    }
    return out.str();
}

} // namespace ttadrift::harness
