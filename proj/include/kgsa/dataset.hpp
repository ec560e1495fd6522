#pragma once

#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "kgsa/error.hpp"
#include "kgsa/subset.hpp"

namespace kgsa {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Paired input/output samples, one row per observation.
class DataSet {
public:
    DataSet() = default;

    DataSet(Matrix inputs, Matrix outputs, std::vector<std::string> input_labels = {},
            std::vector<std::string> output_labels = {})
        : inputs_(std::move(inputs)),
          outputs_(std::move(outputs)),
          input_labels_(std::move(input_labels)),
          output_labels_(std::move(output_labels)) {
        if (inputs_.rows() != outputs_.rows()) {
            throw DataError("input and output row counts differ (" +
                            std::to_string(inputs_.rows()) + " vs " +
                            std::to_string(outputs_.rows()) + ")");
        }
        if (inputs_.rows() < 2) throw DataError("a data set needs at least 2 rows");
        if (inputs_.cols() < 1 || outputs_.cols() < 1) {
            throw DataError("a data set needs at least one input and one output column");
        }
        if (inputs_.cols() > InputSubset::kMaxInputs) throw DataError("more than 64 input columns");
        if (!inputs_.allFinite() || !outputs_.allFinite()) {
            throw DataError("data set contains non-finite entries");
        }
        if (input_labels_.empty()) {
            for (Eigen::Index j = 0; j < inputs_.cols(); ++j) {
                input_labels_.push_back("x" + std::to_string(j + 1));
            }
        }
        if (output_labels_.empty()) {
            for (Eigen::Index j = 0; j < outputs_.cols(); ++j) {
                output_labels_.push_back("y" + std::to_string(j + 1));
            }
        }
        if (static_cast<Eigen::Index>(input_labels_.size()) != inputs_.cols() ||
            static_cast<Eigen::Index>(output_labels_.size()) != outputs_.cols()) {
            throw DataError("column label count does not match column count");
        }
    }

    [[nodiscard]] const Matrix& inputs() const { return inputs_; }
    [[nodiscard]] const Matrix& outputs() const { return outputs_; }
    [[nodiscard]] Eigen::Index size() const { return inputs_.rows(); }
    [[nodiscard]] int input_count() const { return static_cast<int>(inputs_.cols()); }
    [[nodiscard]] int output_count() const { return static_cast<int>(outputs_.cols()); }
    [[nodiscard]] const std::vector<std::string>& input_labels() const { return input_labels_; }
    [[nodiscard]] const std::vector<std::string>& output_labels() const { return output_labels_; }

    /// Input columns belonging to `subset`, in increasing column order.
    [[nodiscard]] Matrix select(InputSubset subset) const {
        if (subset.empty()) throw ConfigError("empty input subset");
        const auto idx = subset.indices();
        if (idx.back() >= input_count()) {
            throw ConfigError("subset " + subset.to_string() + " refers to missing input columns");
        }
        Matrix out(inputs_.rows(), static_cast<Eigen::Index>(idx.size()));
        for (std::size_t k = 0; k < idx.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = inputs_.col(idx[k]);
        return out;
    }

    /// Rows at the given positions, in the given order.
    [[nodiscard]] DataSet rows(const std::vector<Eigen::Index>& ids) const {
        Matrix x(static_cast<Eigen::Index>(ids.size()), inputs_.cols());
        Matrix y(static_cast<Eigen::Index>(ids.size()), outputs_.cols());
        for (std::size_t r = 0; r < ids.size(); ++r) {
            x.row(static_cast<Eigen::Index>(r)) = inputs_.row(ids[r]);
            y.row(static_cast<Eigen::Index>(r)) = outputs_.row(ids[r]);
        }
        return DataSet(std::move(x), std::move(y), input_labels_, output_labels_);
    }

    [[nodiscard]] InputSubset all_inputs() const { return InputSubset::full(input_count()); }

private:
    Matrix inputs_;
    Matrix outputs_;
    std::vector<std::string> input_labels_;
    std::vector<std::string> output_labels_;
};

}  // namespace kgsa
