#include "styf/objectives.hpp"

#include <cmath>

namespace styf {

void LossWeights::validate() const {
    if (dist < 0.0f || style < 0.0f || gan < 0.0f) throw ConfigError("LossWeights: weights must be nonnegative");
}

namespace {

void require_kind(const StreamBatch& batch, StreamKind kind, const char* who) {
    if (batch.kind != kind) throw ContractError(std::string(who) + ": wrong stream kind");
}

Tensor one_minus(const Tensor& x) { return add_const(scale(x, -1.0f), 1.0f); }

Tensor neg_log_clamped(const Tensor& p) { return scale(log_t(clamp_min(p, kProbFloor)), -1.0f); }

}  // namespace

Tensor loss_lm(const StreamBatch& rs_batch, const GeneratorBundle& bundle) {
    require_kind(rs_batch, StreamKind::RS, "loss_lm");
    TeacherForcedResult tf = teacher_forced_forward(rs_batch.target, rs_batch.reference, bundle);
    return cross_entropy(tf.logits, tf.targets);
}

Tensor loss_dist(const StreamBatch& rs_batch, const GeneratorBundle& bundle, const LmModel& lm) {
    require_kind(rs_batch, StreamKind::RS, "loss_dist");
    Tensor teacher_probs;
    {
        NoGradScope no_grad;
        ForwardResult h = transformer_forward(rs_batch.target, lm.tp, nullptr);
        const int t = static_cast<int>(rs_batch.target.size());
        teacher_probs = softmax(slice_rows(h.logits, 0, t - 1));
    }
    TeacherForcedResult tf = teacher_forced_forward(rs_batch.target, rs_batch.reference, bundle);
    if (teacher_probs.rows() != tf.logits.rows())
        throw ContractError("loss_dist: teacher/student alignment mismatch");
    return soft_cross_entropy(teacher_probs, tf.logits);
}

CsForward cs_forward(const StreamBatch& cs_batch, const GeneratorBundle& bundle, const LmModel& lm,
                     int n_gen, const SamplingConfig& sampling, Rng& rng) {
    require_kind(cs_batch, StreamKind::CS, "cs_forward");
    CsForward out;
    out.gen = free_running_generate(cs_batch.context, cs_batch.reference, bundle, n_gen, sampling, rng);
    {
        NoGradScope no_grad;
        out.real_features = transformer_forward(cs_batch.reference, lm.tp, nullptr, false).features;
    }
    return out;
}

Tensor loss_style_from(CsForward& fwd, const ComparatorNet& comparator) {
    Tensor score = comparator_score(fwd.real_features, fwd.gen.features, comparator);
    fwd.comparator_score_value = score.item();
    fwd.comparator_clamped = score.item() < kProbFloor;
    return neg_log_clamped(score);
}

Tensor loss_gan_generator_from(const CsForward& fwd, const DiscriminatorNet& discriminator) {
    return neg_log_clamped(discriminator.forward(fwd.gen.features));
}

Tensor loss_gan_discriminator_from(const Tensor& real_features, const Tensor& fake_features,
                                   const DiscriminatorNet& discriminator) {
    Tensor d_real = discriminator.forward(real_features);
    Tensor d_fake = discriminator.forward(fake_features);
    return add(neg_log_clamped(d_real), neg_log_clamped(one_minus(d_fake)));
}

Tensor loss_style(const StreamBatch& cs_batch, const GeneratorBundle& bundle, const LmModel& lm,
                  const ComparatorNet& comparator, int n_gen, const SamplingConfig& sampling, Rng& rng) {
    CsForward fwd = cs_forward(cs_batch, bundle, lm, n_gen, sampling, rng);
    return loss_style_from(fwd, comparator);
}

Tensor loss_gan_generator(const StreamBatch& cs_batch, const GeneratorBundle& bundle, const LmModel& lm,
                          const DiscriminatorNet& discriminator, int n_gen, const SamplingConfig& sampling,
                          Rng& rng) {
    CsForward fwd = cs_forward(cs_batch, bundle, lm, n_gen, sampling, rng);
    return loss_gan_generator_from(fwd, discriminator);
}

Tensor loss_gan_discriminator(const StreamBatch& cs_batch, const GeneratorBundle& bundle, const LmModel& lm,
                              const DiscriminatorNet& discriminator, int n_gen, const SamplingConfig& sampling,
                              Rng& rng) {
    Tensor real, fake;
    {
        // Generator features are detached: this loss trains only D.
        NoGradScope no_grad;
        CsForward fwd = cs_forward(cs_batch, bundle, lm, n_gen, sampling, rng);
        real = fwd.real_features;
        fake = fwd.gen.features;
    }
    return loss_gan_discriminator_from(real, fake, discriminator);
}

TotalLossResult total_loss(const StreamBatch& rs_batch, const StreamBatch& cs_batch,
                           const GeneratorBundle& bundle, const LmModel& lm,
                           const ComparatorNet& comparator, const DiscriminatorNet& discriminator,
                           const LossWeights& weights, int n_gen, const SamplingConfig& sampling, Rng& rng) {
    weights.validate();
    require_kind(rs_batch, StreamKind::RS, "total_loss");
    require_kind(cs_batch, StreamKind::CS, "total_loss");

    Tensor lm_term = loss_lm(rs_batch, bundle);
    Tensor dist_term = loss_dist(rs_batch, bundle, lm);
    CsForward fwd = cs_forward(cs_batch, bundle, lm, n_gen, sampling, rng);
    Tensor style_term = loss_style_from(fwd, comparator);
    Tensor gan_term = loss_gan_generator_from(fwd, discriminator);

    TotalLossResult out;
    out.total = weighted_sum_scalars({lm_term, dist_term, style_term, gan_term},
                                     {1.0f, weights.dist, weights.style, weights.gan});
    out.breakdown.lm = lm_term.item();
    out.breakdown.dist = dist_term.item();
    out.breakdown.style = style_term.item();
    out.breakdown.gan_generator = gan_term.item();
    out.breakdown.total = out.total.item();
    {
        NoGradScope no_grad;
        out.breakdown.gan_discriminator =
            loss_gan_discriminator_from(fwd.real_features.detach(), fwd.gen.features.detach(), discriminator).item();
    }
    return out;
}

Tensor comparator_pretrain_loss(const Tensor& features_a, const Tensor& features_b, bool same_style,
                                const ComparatorNet& comparator) {
    Tensor score = comparator_score(features_a, features_b, comparator);
    if (same_style) return neg_log_clamped(score);
    return neg_log_clamped(one_minus(score));
}

// ---- Frechet embedding distance -------------------------------------------

namespace {

// Cyclic Jacobi eigendecomposition of a symmetric matrix (row-major,
// doubles). A is destroyed; eigenvectors land in V columns.
void jacobi_eigh(std::vector<double>& a, int n, std::vector<double>& eigvals, std::vector<double>& v) {
    v.assign(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i) * n + i] = 1.0;
    auto at = [&](std::vector<double>& m, int r, int c) -> double& { return m[static_cast<std::size_t>(r) * n + c]; };
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off += at(a, p, q) * at(a, p, q);
        if (off < 1e-24) break;
        for (int p = 0; p < n; ++p) {
            for (int q = p + 1; q < n; ++q) {
                const double apq = at(a, p, q);
                if (std::abs(apq) < 1e-30) continue;
                const double app = at(a, p, p), aqq = at(a, q, q);
                const double tau = (aqq - app) / (2.0 * apq);
                const double t = (tau >= 0.0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = t * c;
                for (int k = 0; k < n; ++k) {
                    const double akp = at(a, k, p), akq = at(a, k, q);
                    at(a, k, p) = c * akp - s * akq;
                    at(a, k, q) = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    const double apk = at(a, p, k), aqk = at(a, q, k);
                    at(a, p, k) = c * apk - s * aqk;
                    at(a, q, k) = s * apk + c * aqk;
                }
                for (int k = 0; k < n; ++k) {
                    const double vkp = at(v, k, p), vkq = at(v, k, q);
                    at(v, k, p) = c * vkp - s * vkq;
                    at(v, k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    eigvals.resize(n);
    for (int i = 0; i < n; ++i) eigvals[i] = a[static_cast<std::size_t>(i) * n + i];
}

// Symmetric PSD square root; negative eigenvalues are clamped to zero.
std::vector<double> sqrt_psd(const std::vector<double>& m, int n) {
    std::vector<double> a = m, eigvals, v;
    jacobi_eigh(a, n, eigvals, v);
    for (double& e : eigvals) e = e > 0.0 ? std::sqrt(e) : 0.0;
    std::vector<double> out(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int k = 0; k < n; ++k)
                acc += v[static_cast<std::size_t>(i) * n + k] * eigvals[k] * v[static_cast<std::size_t>(j) * n + k];
            out[static_cast<std::size_t>(i) * n + j] = acc;
        }
    return out;
}

void gaussian_fit(const Tensor& set, std::vector<double>& mean, std::vector<double>& cov) {
    const int n = set.rows(), d = set.cols();
    mean.assign(d, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) mean[j] += set.at(i, j);
    for (double& m : mean) m /= n;
    cov.assign(static_cast<std::size_t>(d) * d, 0.0);
    for (int i = 0; i < n; ++i)
        for (int r = 0; r < d; ++r) {
            const double dr = set.at(i, r) - mean[r];
            for (int c = r; c < d; ++c) cov[static_cast<std::size_t>(r) * d + c] += dr * (set.at(i, c) - mean[c]);
        }
    for (int r = 0; r < d; ++r)
        for (int c = r; c < d; ++c) {
            const double val = cov[static_cast<std::size_t>(r) * d + c] / n;
            cov[static_cast<std::size_t>(r) * d + c] = val;
            cov[static_cast<std::size_t>(c) * d + r] = val;
        }
}

}  // namespace

double fed(const Tensor& set_a, const Tensor& set_b) {
    if (set_a.cols() != set_b.cols()) throw ContractError("fed: feature dims disagree");
    const int d = set_a.cols();
    if (set_a.rows() < d + 1 || set_b.rows() < d + 1)
        throw ContractError("fed: need more samples than the feature dimension");

    std::vector<double> mu_a, mu_b, cov_a, cov_b;
    gaussian_fit(set_a, mu_a, cov_a);
    gaussian_fit(set_b, mu_b, cov_b);

    double mean_term = 0.0;
    for (int j = 0; j < d; ++j) {
        const double diff = mu_a[j] - mu_b[j];
        mean_term += diff * diff;
    }
    double trace_a = 0.0, trace_b = 0.0;
    for (int j = 0; j < d; ++j) {
        trace_a += cov_a[static_cast<std::size_t>(j) * d + j];
        trace_b += cov_b[static_cast<std::size_t>(j) * d + j];
    }

    // tr((cov_a cov_b)^{1/2}) via the symmetric form sqrt(S) cov_b sqrt(S).
    std::vector<double> s = sqrt_psd(cov_a, d);
    std::vector<double> tmp(static_cast<std::size_t>(d) * d, 0.0);
    for (int i = 0; i < d; ++i)
        for (int k = 0; k < d; ++k) {
            const double sik = s[static_cast<std::size_t>(i) * d + k];
            if (sik == 0.0) continue;
            for (int j = 0; j < d; ++j) tmp[static_cast<std::size_t>(i) * d + j] += sik * cov_b[static_cast<std::size_t>(k) * d + j];
        }
    std::vector<double> inner(static_cast<std::size_t>(d) * d, 0.0);
    for (int i = 0; i < d; ++i)
        for (int k = 0; k < d; ++k) {
            const double tik = tmp[static_cast<std::size_t>(i) * d + k];
            if (tik == 0.0) continue;
            for (int j = 0; j < d; ++j) inner[static_cast<std::size_t>(i) * d + j] += tik * s[static_cast<std::size_t>(k) * d + j];
        }
    // Symmetrize before the eigensolve; the product picks up tiny asymmetry.
    for (int i = 0; i < d; ++i)
        for (int j = i + 1; j < d; ++j) {
            const double avg = 0.5 * (inner[static_cast<std::size_t>(i) * d + j] + inner[static_cast<std::size_t>(j) * d + i]);
            inner[static_cast<std::size_t>(i) * d + j] = avg;
            inner[static_cast<std::size_t>(j) * d + i] = avg;
        }
    std::vector<double> eigvals, v;
    jacobi_eigh(inner, d, eigvals, v);
    double trace_sqrt = 0.0;
    for (double e : eigvals)
        if (e > 0.0) trace_sqrt += std::sqrt(e);

    const double value = mean_term + trace_a + trace_b - 2.0 * trace_sqrt;
    return value > 0.0 ? value : 0.0;
}

}  // namespace styf
