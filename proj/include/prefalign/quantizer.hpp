// Toy scalar-quantizer codec: a k-means codebook over frame vectors, trained
// once on clean frames and then frozen. One token per frame.

#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "prefalign/rng.hpp"
#include "prefalign/signal.hpp"

namespace prefalign {

struct TokenSequence {
    std::vector<int> tokens;
    int vocab_size{0};

    bool operator==(const TokenSequence& o) const = default;
};

class Codebook {
  public:
    Codebook() = default;

    int vocab_size() const { return centroids_.rows; }
    int dim() const { return centroids_.cols; }
    bool trained() const { return trained_; }
    const Array2D& centroids() const { return centroids_; }

    // Lloyd's algorithm with seeded initialization from distinct frames.
    // Empty clusters are reseeded to the point farthest from its assignment.
    static Codebook train(const std::vector<FrameMatrix>& corpora, int vocab, uint64_t seed, int iters = 20) {
        std::vector<const double*> points;
        int dim = -1;
        for (const auto& fm : corpora) {
            if (dim < 0) {
                dim = fm.cols;
            }
            if (fm.cols != dim) {
                throw std::invalid_argument("Codebook::train: frame dims disagree");
            }
            for (int r = 0; r < fm.rows; ++r) {
                points.push_back(fm.row_ptr(r));
            }
        }
        if (static_cast<int>(points.size()) < vocab) {
            throw std::invalid_argument("Codebook::train: fewer frames than codewords");
        }
        Rng rng(seed);
        Codebook cb;
        cb.centroids_ = Array2D(vocab, dim);
        std::vector<int> chosen;
        while (static_cast<int>(chosen.size()) < vocab) {
            const int cand = rng.uniform_int(static_cast<int>(points.size()));
            bool dup = false;
            for (int c : chosen) {
                dup = dup || c == cand;
            }
            if (!dup) {
                chosen.push_back(cand);
            }
        }
        for (int k = 0; k < vocab; ++k) {
            std::copy(points[static_cast<size_t>(chosen[static_cast<size_t>(k)])],
                      points[static_cast<size_t>(chosen[static_cast<size_t>(k)])] + dim, cb.centroids_.row_ptr(k));
        }

        std::vector<int> assign(points.size(), 0);
        std::vector<double> dist(points.size(), 0.0);
        for (int it = 0; it < iters; ++it) {
            for (size_t p = 0; p < points.size(); ++p) {
                assign[p] = cb.nearest(points[p], &dist[p]);
            }
            Array2D sums(vocab, dim);
            std::vector<int> counts(static_cast<size_t>(vocab), 0);
            for (size_t p = 0; p < points.size(); ++p) {
                counts[static_cast<size_t>(assign[p])]++;
                double* dst = sums.row_ptr(assign[p]);
                for (int j = 0; j < dim; ++j) {
                    dst[j] += points[p][j];
                }
            }
            for (int k = 0; k < vocab; ++k) {
                if (counts[static_cast<size_t>(k)] == 0) {
                    // farthest point from its current centroid becomes the new codeword
                    size_t far = 0;
                    for (size_t p = 1; p < points.size(); ++p) {
                        if (dist[p] > dist[far]) {
                            far = p;
                        }
                    }
                    std::copy(points[far], points[far] + dim, cb.centroids_.row_ptr(k));
                    dist[far] = 0.0;
                } else {
                    double* dst = cb.centroids_.row_ptr(k);
                    for (int j = 0; j < dim; ++j) {
                        dst[j] = sums.at(k, j) / counts[static_cast<size_t>(k)];
                    }
                }
            }
        }
        cb.trained_ = true;
        return cb;
    }

    TokenSequence tokenize(const FrameMatrix& fm) const {
        require_trained();
        if (fm.cols != dim()) {
            throw std::invalid_argument("Codebook::tokenize: frame dim mismatch");
        }
        TokenSequence out;
        out.vocab_size = vocab_size();
        out.tokens.resize(static_cast<size_t>(fm.rows));
        for (int r = 0; r < fm.rows; ++r) {
            out.tokens[static_cast<size_t>(r)] = nearest(fm.row_ptr(r), nullptr);
        }
        return out;
    }

    FrameMatrix detokenize(const TokenSequence& ts) const {
        require_trained();
        if (ts.tokens.empty()) {
            throw std::invalid_argument("Codebook::detokenize: empty token sequence");
        }
        FrameMatrix out(static_cast<int>(ts.tokens.size()), dim());
        for (size_t i = 0; i < ts.tokens.size(); ++i) {
            const int tok = ts.tokens[i];
            if (tok < 0 || tok >= vocab_size()) {
                throw std::invalid_argument("Codebook::detokenize: token out of range");
            }
            std::copy(centroids_.row_ptr(tok), centroids_.row_ptr(tok) + dim(), out.row_ptr(static_cast<int>(i)));
        }
        return out;
    }

    double quantization_mse(const FrameMatrix& fm) const {
        require_trained();
        double total = 0.0;
        for (int r = 0; r < fm.rows; ++r) {
            double d = 0.0;
            nearest(fm.row_ptr(r), &d);
            total += d;
        }
        return total / (static_cast<double>(fm.rows) * dim());
    }

    // Serialization hooks for checkpoints.
    void set_centroids(Array2D c) {
        centroids_ = std::move(c);
        trained_ = centroids_.rows > 0;
    }

  private:
    int nearest(const double* point, double* out_dist) const {
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (int k = 0; k < vocab_size(); ++k) {
            const double* c = centroids_.row_ptr(k);
            double d = 0.0;
            for (int j = 0; j < dim(); ++j) {
                const double diff = point[j] - c[j];
                d += diff * diff;
            }
            if (d < best_d) {
                best_d = d;
                best = k;
            }
        }
        if (out_dist != nullptr) {
            *out_dist = best_d;
        }
        return best;
    }

    void require_trained() const {
        if (!trained_) {
            throw std::logic_error("Codebook: codebook has not been trained");
        }
    }

    Array2D centroids_;
    bool trained_{false};
};

}  // namespace prefalign
