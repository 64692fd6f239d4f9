#include "d3t/metrics.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "d3t/losses.hpp"
#include "d3t/rng.hpp"

namespace d3t::metrics {

namespace {
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<const Mat>;
} // namespace

GaussianStats gaussian_stats(const Tensor& features) {
    if (features.rank() != 2) throw std::invalid_argument("gaussian_stats: need [n,d] features");
    const int n = features.shape[0], d = features.shape[1];
    if (n < 2) throw std::invalid_argument("gaussian_stats: need at least 2 samples");
    GaussianStats s;
    s.d = d;
    s.count = n;
    s.mean.assign(static_cast<size_t>(d), 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) s.mean[static_cast<size_t>(j)] += features[long(i) * d + j];
    for (double& v : s.mean) v /= n;

    Mat c = Mat::Zero(d, d);
    for (int i = 0; i < n; ++i) {
        Eigen::VectorXd row(d);
        for (int j = 0; j < d; ++j)
            row[j] = double(features[long(i) * d + j]) - s.mean[static_cast<size_t>(j)];
        c.noalias() += row * row.transpose();
    }
    c /= double(n - 1);
    c = ((c + c.transpose()) * 0.5).eval();
    s.cov.assign(c.data(), c.data() + long(d) * d);
    return s;
}

std::vector<double> sym_sqrt(const std::vector<double>& m, int d) {
    if (static_cast<long>(m.size()) != long(d) * d)
        throw std::invalid_argument("sym_sqrt: size mismatch");
    MapMat mm(m.data(), d, d);
    Mat sym = ((mm + mm.transpose()) * 0.5).eval();
    Eigen::SelfAdjointEigenSolver<Mat> es(sym);
    if (es.info() != Eigen::Success) throw std::runtime_error("sym_sqrt: eigensolver failed");
    Eigen::VectorXd ev = es.eigenvalues();
    for (int i = 0; i < d; ++i) ev[i] = ev[i] > 0 ? std::sqrt(ev[i]) : 0.0;
    Mat r = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
    return std::vector<double>(r.data(), r.data() + long(d) * d);
}

double fid(const GaussianStats& a, const GaussianStats& b) {
    if (a.d != b.d) throw std::invalid_argument("fid: dimension mismatch");
    const int d = a.d;
    for (double v : a.mean)
        if (!std::isfinite(v)) throw std::invalid_argument("fid: non-finite stats");
    for (double v : b.mean)
        if (!std::isfinite(v)) throw std::invalid_argument("fid: non-finite stats");

    MapMat ca0(a.cov.data(), d, d), cb0(b.cov.data(), d, d);
    Mat ca = ca0, cb = cb0;
    {
        Eigen::SelfAdjointEigenSolver<Mat> ea(ca, Eigen::EigenvaluesOnly);
        Eigen::SelfAdjointEigenSolver<Mat> eb(cb, Eigen::EigenvaluesOnly);
        const double mina = ea.eigenvalues().minCoeff(), minb = eb.eigenvalues().minCoeff();
        if (mina < 1e-6 || minb < 1e-6) {
            ca += 1e-6 * Mat::Identity(d, d);
            cb += 1e-6 * Mat::Identity(d, d);
        }
    }

    double mean_term = 0;
    for (int i = 0; i < d; ++i) {
        const double diff = a.mean[static_cast<size_t>(i)] - b.mean[static_cast<size_t>(i)];
        mean_term += diff * diff;
    }

    std::vector<double> ra(ca.data(), ca.data() + long(d) * d);
    std::vector<double> sq = sym_sqrt(ra, d);
    MapMat sqa(sq.data(), d, d);
    Mat inner = sqa * cb * sqa;
    const double asym = (inner - inner.transpose()).cwiseAbs().maxCoeff();
    if (asym > 1e-3)
        std::fprintf(stderr, "fid: inner product asymmetry %.3g discarded\n", asym);
    std::vector<double> ri(inner.data(), inner.data() + long(d) * d);
    std::vector<double> sqm = sym_sqrt(ri, d);
    double tr = 0;
    for (int i = 0; i < d; ++i) {
        tr += ca(i, i) + cb(i, i) - 2.0 * sqm[static_cast<size_t>(i) * d + i];
    }
    return mean_term + tr;
}

Tensor generated_descriptors(const backbone::GanSnapshot& snapshot, int n,
                             const extractor::Extractor& ex, uint64_t seed) {
    if (n < 2) throw std::invalid_argument("generated_descriptors: need n >= 2");
    const int sd = snapshot.config.style_dim;
    const int dim = ex.descriptor_dim();
    Tensor out({n, dim});
    const int batch = 16;
    for (int start = 0; start < n; start += batch) {
        const int b = std::min(batch, n - start);
        Tensor z({b, sd});
        for (int i = 0; i < b; ++i) {
            Rng rng(Rng::mix(seed, static_cast<uint64_t>(start + i)));
            for (int j = 0; j < sd; ++j) z[long(i) * sd + j] = rng.normal();
        }
        Tensor w = backbone::map_noise_t(snapshot, z);
        std::vector<Tensor> styles(static_cast<size_t>(snapshot.config.layer_count()), w);
        Tensor imgs = backbone::synthesize(snapshot, styles, seed).image;
        Tensor desc = ex.descriptors(imgs);
        for (int i = 0; i < b; ++i)
            for (int j = 0; j < dim; ++j)
                out[long(start + i) * dim + j] = desc[long(i) * dim + j];
    }
    return out;
}

FIDReport evaluate_fid(const backbone::GanSnapshot& snapshot, const GaussianStats& real_stats,
                       int n_fake, const extractor::Extractor& ex, uint64_t seed) {
    Tensor fake = generated_descriptors(snapshot, n_fake, ex, seed);
    FIDReport r;
    r.score = fid(real_stats, gaussian_stats(fake));
    r.extractor_id = ex.id;
    r.n_real = real_stats.count;
    r.n_fake = n_fake;
    r.snapshot_step = snapshot.step;
    return r;
}

Tensor discriminator_features(const backbone::GanSnapshot& snapshot, const Tensor& images,
                              int layer) {
    backbone::ParamSet p = backbone::ParamSet::constants(snapshot);
    backbone::DiscOut d = backbone::discriminate(p, snapshot.config, ad::Var::constant(images));
    if (layer < 1 || layer > static_cast<int>(d.taps.size()))
        throw std::invalid_argument("discriminator_features: layer " + std::to_string(layer) +
                                    " out of range 1.." + std::to_string(d.taps.size()));
    return losses::pool(d.taps[static_cast<size_t>(layer - 1)]).value();
}

void write_feature_matrix(const std::string& path, const Tensor& matrix,
                          const std::string& metadata) {
    if (matrix.rank() != 2) throw std::invalid_argument("write_feature_matrix: need [n,d]");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_feature_matrix: cannot open " + path);
    f << "# " << metadata << "\n";
    const int n = matrix.shape[0], d = matrix.shape[1];
    char buf[48];
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) {
            std::snprintf(buf, sizeof(buf), "%.9g", double(matrix[long(i) * d + j]));
            f << (j ? "\t" : "") << buf;
        }
        f << "\n";
    }
    if (!f) throw std::runtime_error("write_feature_matrix: write failed for " + path);
}

} // namespace d3t::metrics
