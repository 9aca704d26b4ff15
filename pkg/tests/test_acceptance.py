"""Acceptance criteria at their stated tolerances.

Each test records one PASS/FAIL line that pytest prints in an
"acceptance criteria" section at the end of the run. The slow table
reproductions run at desk scale with seed 7.
"""

import time

import numpy as np
import pytest
from scipy import integrate

from dpdllb import benchmarks
from dpdllb.bootstrap import PosteriorDraws, draw_weights, llb_sgd_sample
from dpdllb.calibration import InformationPair, calibrate_scale, estimate_information, self_information_grad
from dpdllb.datasim import SCALAR_SCENARIOS, gen_contaminated_scalar, gen_poisson_regression
from dpdllb.dpd import DpdConfig, analytic_gradient, integral_term, stochastic_gradient
from dpdllb.glm import GlmDataset, PoissonLog, glm_exact_gradient, glm_stochastic_gradient
from dpdllb.models import Gompertz, InverseGaussian, Normal, Poisson
from dpdllb.sgd import make_schedule

SEED = 7

# Likelihood fits on the criterion-8 datasets (seed 7, repetition 0), found by
# a grid search over the scipy log-likelihood refined with Nelder-Mead.
IG_MLE_MU = 1.438928
GOMPERTZ_MLE_OMEGA = 0.074203


def _rel(a, b):
    return abs(a - b) / abs(b)


def test_c1_table1_reproduction(criterion):
    t0 = time.perf_counter()
    res = benchmarks.table1(seed=SEED)
    secs = time.perf_counter() - t0
    rows = {(r["method"], r["parameter"]): r for r in res["rows"]}
    checks = {}
    for meth in ("llb-exact", "llb-sgd", "mh-dpd"):
        mu, sg = rows[meth, "mu"], rows[meth, "sigma"]
        checks[f"{meth} |mean mu| <= 0.05"] = abs(mu["mean"]) <= 0.05
        checks[f"{meth} mean sigma in [0.99, 1.04]"] = 0.99 <= sg["mean"] <= 1.04
        checks[f"{meth} var mu in [5e-4, 2.5e-3]"] = 5e-4 <= mu["variance"] <= 2.5e-3
        checks[f"{meth} var sigma in [4e-4, 1.6e-3]"] = 4e-4 <= sg["variance"] <= 1.6e-3
    for a, b in (("llb-exact", "llb-sgd"), ("mh-dpd", "llb-sgd")):
        for par in ("mu", "sigma"):
            checks[f"{a} vs {b} {par} means < 0.01"] = abs(rows[a, par]["mean"] - rows[b, par]["mean"]) < 0.01
            checks[f"{a} vs {b} {par} variances < 25%"] = _rel(rows[a, par]["variance"],
                                                               rows[b, par]["variance"]) < 0.25
    checks["runtime < 10 min"] = secs < 600
    detail = "; ".join(f"{m} mu {rows[m, 'mu']['mean']:+.4f}/{rows[m, 'mu']['variance']:.5f} "
                       f"sigma {rows[m, 'sigma']['mean']:.4f}/{rows[m, 'sigma']['variance']:.5f}"
                       for m in ("llb-exact", "llb-sgd", "mh-dpd")) + f"; {secs:.0f}s"
    criterion("C1", "Table-1 reproduction", checks, detail)


def test_c2_table2_scalability(criterion):
    t0 = time.perf_counter()
    res = benchmarks.table2(seed=SEED, dims=(2, 3, 5))
    secs = time.perf_counter() - t0
    rows = {(r["method"], r["p"]): r for r in res["rows"]}
    sgd_ratio = rows["sgd", 5]["seconds"] / rows["sgd", 2]["seconds"]
    gd_ratio = rows["gdni", 5]["seconds"] / rows["gdni", 2]["seconds"]
    checks = {"SGD time p5/p2 <= 1.5": sgd_ratio <= 1.5, "GD+NI time p5/p2 >= 20": gd_ratio >= 20,
              "runtime < 20 min": secs < 1200}
    detail = [f"SGD ratio {sgd_ratio:.2f}", f"GD+NI ratio {gd_ratio:.0f}"]
    for p in (2, 3):
        a, b = rows["sgd", p]["mse"], rows["gdni", p]["mse"]
        # "within 40% of each other" read as larger / smaller <= 1.4
        checks[f"p={p} MSE within 40%"] = max(a, b) / min(a, b) <= 1.4
        checks[f"p={p} both MSE <= 0.03"] = max(a, b) <= 0.03
        detail.append(f"p={p} MSE sgd {a:.4f} gdni {b:.4f}")
    criterion("C2", "Table-2 scalability", checks, ", ".join(detail) + f"; {secs:.0f}s")


def test_c3_table3_glm(criterion):
    t0 = time.perf_counter()
    res = benchmarks.table3(seed=SEED)
    secs = time.perf_counter() - t0
    rows = {(r["method"], r["p"]): r for r in res["rows"]}
    checks, detail = {"runtime < 30 min": secs < 1800}, []
    for p in (2, 5):
        prop, ex = rows["proposed", p], rows["existing", p]
        checks[f"p={p} proposed MSE <= 0.01"] = prop["mse"] <= 0.01
        checks[f"p={p} coverage in [0.87, 0.99]"] = 0.87 <= prop["coverage"] <= 0.99
        checks[f"p={p} existing MSE >= 5x proposed"] = ex["mse"] >= 5 * prop["mse"]
        detail.append(f"p={p} proposed MSE {prop['mse']:.4f} CP {prop['coverage']:.3f}, "
                      f"existing MSE {ex['mse']:.4f}")
    criterion("C3", "Table-3 GLM study", checks, "; ".join(detail) + f"; {secs:.0f}s")


def test_c4_gradient_unbiasedness(criterion):
    t0 = time.perf_counter()
    reps = 100_000
    rng = np.random.default_rng(SEED)
    # Normal: contaminated data, non-uniform weights, parameter away from the optimum
    x = gen_contaminated_scalar(SCALAR_SCENARIOS["contaminated-normal"].with_n(50), rng).points
    w = draw_weights(50, rng)
    theta = np.array([0.2, 1.3])
    cfg = DpdConfig(0.5, 5)
    g = np.array([stochastic_gradient(Normal(), theta, x, w, cfg, rng).value for _ in range(reps)])
    exact = analytic_gradient(Normal(), theta, x, w, cfg).value
    z_normal = np.abs(g.mean(axis=0) - exact) / (g.std(axis=0, ddof=1) / np.sqrt(reps))
    # Poisson GLM: exact gradient from truncated sums as the oracle
    data = gen_poisson_regression(20, 2, rng)
    wg = draw_weights(20, rng)
    beta = data.beta_true + 0.1
    gg = np.array([glm_stochastic_gradient(PoissonLog(), beta, data, wg, cfg, rng).value for _ in range(reps)])
    exact_g = glm_exact_gradient(PoissonLog(), beta, data, wg, 0.5).value
    z_glm = np.abs(gg.mean(axis=0) - exact_g) / (gg.std(axis=0, ddof=1) / np.sqrt(reps))
    secs = time.perf_counter() - t0
    checks = {"normal within 3 SE": bool(np.all(z_normal < 3)), "poisson GLM within 3 SE": bool(np.all(z_glm < 3)),
              "runtime < 2 min": secs < 120}
    criterion("C4", "gradient unbiasedness", checks,
              f"normal |z| {np.round(z_normal, 2).tolist()}, GLM |z| {np.round(z_glm, 2).tolist()}; {secs:.0f}s")


def test_c5_variance_law(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED)
    x = rng.standard_normal(30)
    w = np.full(30, 1 / 30)
    theta = np.array([0.1, 1.2])
    ms = np.array([1, 5, 25, 125])
    var = []
    for m in ms:
        cfg = DpdConfig(0.5, int(m))
        g = np.array([stochastic_gradient(Normal(), theta, x, w, cfg, rng).value for _ in range(20_000)])
        var.append(g.var(axis=0, ddof=1))
    slopes = np.polyfit(np.log(ms), np.log(np.array(var)), 1)[0]
    secs = time.perf_counter() - t0
    checks = {f"slope {nm} in [-1.15, -0.85]": bool(-1.15 <= s <= -0.85) for nm, s in zip(("mu", "sigma"), slopes)}
    checks["runtime < 2 min"] = secs < 120
    criterion("C5", "variance law", checks, f"slopes {np.round(slopes, 3).tolist()}; {secs:.0f}s")


def test_c6_calibration_recovery(criterion):
    x = np.random.default_rng(SEED).normal(0.0, 1.0, 5000)
    model = Normal()
    w = calibrate_scale(estimate_information(self_information_grad(model), x, model.mle(x)))
    w_id = calibrate_scale(InformationPair(np.eye(2), np.eye(2), np.zeros(2)))
    criterion("C6", "calibration recovery", {"scale in [0.9, 1.1]": 0.9 <= w <= 1.1, "identity case gives 1": w_id == 1.0},
              f"scale = {w:.4f}, identity scale = {w_id}")


def test_c7_alpha_sensitivity(criterion):
    t0 = time.perf_counter()
    res = benchmarks.supp_alpha(seed=SEED, reps=200, n=100, alphas=(0.0, 0.5), models=("normal",))
    secs = time.perf_counter() - t0
    cov = {r["alpha"]: r["coverage"] for r in res["rows"] if r["parameter"] == "mu"}
    checks = {"alpha=0 coverage(mu) < 0.5": cov[0.0] < 0.5, "alpha=0.5 coverage(mu) in [0.88, 0.99]":
              0.88 <= cov[0.5] <= 0.99, "runtime < 15 min": secs < 900}
    criterion("C7", "alpha sensitivity", checks,
              f"coverage(mu) alpha=0: {cov[0.0]:.3f}, alpha=0.5: {cov[0.5]:.3f}; {secs:.0f}s")


def test_c8_intractable_models(criterion):
    t0 = time.perf_counter()
    res = benchmarks.supp_intractable(seed=SEED)
    secs = time.perf_counter() - t0
    rows = {(r["model"], r["parameter"]): r for r in res["rows"]}
    ig, gz = rows["invgauss", "mu"], rows["gompertz", "omega"]
    checks = {
        "IG posterior mean mu within 0.15 of 1": abs(ig["posterior_mean"] - 1.0) <= 0.15,
        "IG likelihood fit shifts mu > 0.2": IG_MLE_MU - 1.0 > 0.2,
        "IG MLE matches brute-force oracle": abs(ig["mle"] - IG_MLE_MU) < 1e-5,
        "Gompertz posterior mean omega within 0.15 of 1": abs(gz["posterior_mean"] - 1.0) <= 0.15,
        "Gompertz likelihood fit shifts omega > 0.2": abs(GOMPERTZ_MLE_OMEGA - 1.0) > 0.2,
        "Gompertz MLE matches brute-force oracle": abs(gz["mle"] - GOMPERTZ_MLE_OMEGA) < 1e-5,
        "runtime < 10 min": secs < 600,
    }
    criterion("C8", "intractable models", checks,
              f"IG mu {ig['posterior_mean']:.4f} (MLE {ig['mle']:.4f}), Gompertz omega "
              f"{gz['posterior_mean']:.4f} (MLE {gz['mle']:.4f}); {secs:.0f}s")


def test_c9a_dirichlet_weight_laws(criterion):
    n, reps = 10, 100_000
    rng = np.random.default_rng(SEED)
    W = np.array([draw_weights(n, rng) for _ in range(reps)])
    mean_err = np.max(np.abs(W.mean(axis=0) * n - 1))
    var_err = np.max(np.abs(W.var(axis=0) / ((n - 1) / (n**2 * (n + 1))) - 1))
    criterion("C9a", "Dirichlet weight laws", {"mean 1/n within 5%": mean_err < 0.05, "variance within 5%": var_err < 0.05},
              f"max rel error mean {mean_err:.4f}, variance {var_err:.4f}")


def test_c9b_closed_form_vs_quadrature(criterion):
    worst = 0.0
    for alpha in (0.1, 0.5, 1.0):
        for theta in ([0.0, 1.0], [1.5, 0.4], [-2.0, 3.0]):
            f = lambda x: np.exp((1 + alpha) * Normal().log_density(theta, x))
            quad = integrate.quad(f, -np.inf, np.inf, epsabs=0, epsrel=1e-12)[0] / (1 + alpha)
            worst = max(worst, _rel(integral_term(Normal(), theta, DpdConfig(alpha)), quad))
    criterion("C9b", "closed form vs quadrature", {"rel error <= 1e-6": worst <= 1e-6}, f"max rel error {worst:.2e}")


def test_c9c_score_vs_finite_differences(criterion):
    rng = np.random.default_rng(SEED)
    cases = [(Normal(), lambda: np.array([rng.normal(), rng.uniform(0.3, 3)]), lambda th: rng.normal(th[0], 2 * th[1])),
             (Poisson(), lambda: np.array([rng.uniform(0.3, 8)]), lambda th: float(rng.poisson(th[0]))),
             (InverseGaussian(), lambda: rng.uniform([0.5, 0.5], [3, 6]), lambda th: rng.wald(*th)),
             (Gompertz(), lambda: rng.uniform([0.3, 0.05], [2, 1]), lambda th: Gompertz().sample(th, 1, rng)[0])]
    worst = 0.0
    for model, draw_theta, draw_x in cases:
        for _ in range(100):
            theta = draw_theta()
            x = draw_x(theta)
            u = model.score(theta, x)
            for k in range(theta.size):
                h = 1e-6 * (1 + abs(theta[k]))
                e = np.zeros_like(theta)
                e[k] = h
                fd = (model.log_density(theta + e, x) - model.log_density(theta - e, x)) / (2 * h)
                worst = max(worst, abs(u[k] - fd) / max(abs(fd), 1e-2))
    criterion("C9c", "score vs finite differences", {"rel error <= 1e-4": worst <= 1e-4}, f"max rel error {worst:.2e}")


def test_c9d_parallel_determinism(criterion, tmp_path):
    data = gen_contaminated_scalar(SCALAR_SCENARIOS["contaminated-normal"].with_n(200), np.random.default_rng(SEED))
    args = (Normal(), data, DpdConfig(0.5, 10), make_schedule("inverse-time", 1.5, 3.0), 600, 100, SEED)
    blobs = []
    for k in (1, 4):
        llb_sgd_sample(*args, workers=k).to_csv(tmp_path / f"w{k}.csv")
        blobs.append((tmp_path / f"w{k}.csv").read_bytes())
    criterion("C9d", "parallel determinism", {"workers 1 and 4 byte-identical": blobs[0] == blobs[1]},
              f"{len(blobs[0])} bytes each")


def test_c9e_csv_round_trip(criterion, tmp_path):
    from dpdllb.cli import export_csv, ingest_csv

    rng = np.random.default_rng(SEED)
    draws = PosteriorDraws(rng.standard_normal((50, 2)) * np.array([1e-8, 1e8]), ("mu", "sigma"))
    draws.to_csv(tmp_path / "d.csv")
    back = PosteriorDraws.from_csv(tmp_path / "d.csv")
    data = gen_contaminated_scalar(SCALAR_SCENARIOS["contaminated-gompertz"], rng)
    export_csv(data, tmp_path / "x.csv")
    glm = gen_poisson_regression(40, 3, rng)
    export_csv(glm, tmp_path / "g.csv")
    gback = ingest_csv(tmp_path / "g.csv", glm=True)
    checks = {"draws identical": np.array_equal(back.draws, draws.draws) and back.names == draws.names,
              "dataset identical": np.array_equal(ingest_csv(tmp_path / "x.csv").points, data.points),
              "GLM dataset identical": isinstance(gback, GlmDataset) and np.array_equal(gback.X, glm.X)
              and np.array_equal(gback.y, glm.y)}
    criterion("C9e", "CSV round trip", checks, "draws, scalar and GLM datasets")
