"""Acceptance gate: the checks a release of this package must pass.

Each test covers one numbered criterion and prints a single

    ACCEPTANCE <n> <label>: PASS|FAIL (<measurements>)

line, so running this file reads as a checklist.  The numbered tests
cover, in order: operator identities, network gradients, solver sanity,
local-prior exactness, global-prior learning, end-to-end quality against
the bilinear baseline, degradation under extreme undersampling, the
optional measured-dataset reproduction, and lifetime-fit accuracy.

The suite is CPU-heavy (two scenes train the patch network at full
protocol; expect roughly half an hour).  Run it with `-s` to see the
checklist lines as they complete:

    pytest tests/test_acceptance.py -v -s
"""

import dataclasses
import os

import numpy as np
import pytest

from sisifus import cli, fileio, lifetime, local_prior, phantom, sampling
from sisifus.core import Plane, SamplingMap
from sisifus.global_prior import (predict_global_prior, train_global_prior,
                                  train_predictor)
from sisifus.local_prior import LocalPriorConfig
from sisifus.network import build_network
from sisifus.patches import GlobalPriorConfig, augment, extract_patches
from sisifus.solver import (Problem, ReconstructionConfig, SolverState,
                            dual_update, primal_update, reconstruct, shrink,
                            tv_forward, tv_adjoint, z_update)

CLASSES = np.array([0.0, 1.0, 3.0])  # two-class scenes: background, blobs, ridges


def report(num: int, label: str, checks) -> None:
    """Print the checklist line, then fail the test if any check failed."""
    ok = all(c[0] for c in checks)
    detail = "; ".join(c[1] for c in checks)
    print(f"\nACCEPTANCE {num} {label}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"criterion {num} ({label}): {detail}"


def nearest_class(values: np.ndarray) -> np.ndarray:
    return CLASSES[np.argmin(np.abs(values[..., None] - CLASSES), axis=-1)]


def lifetime_plane(values) -> Plane:
    return Plane(values=np.asarray(values, dtype=np.float64), role="lifetime",
                 units="ns")


def bare_problem(smap: SamplingMap) -> Problem:
    """A Problem carrying only geometry, for exercising the operators."""
    return Problem(b=np.zeros(smap.lr_shape), valid=np.ones(smap.lr_shape, bool),
                   smap=smap, lp=None, gp=None, gp_w=None,
                   alpha=0.0, beta=0.0, gamma=0.0, rho=1.0)


# ---------------------------------------------------------------------------
# 1. Operator identities


def golden_section(f, lo, hi, tol):
    inv_phi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - inv_phi * (b - a), a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    return (a + b) / 2.0


def test_1_operator_correctness():
    rng = np.random.default_rng(11)

    dec_dev = 0.0
    for _ in range(20):
        shape = (int(rng.integers(8, 33)), int(rng.integers(8, 33)))
        factor = int(rng.integers(1, 6))
        offset = (int(rng.integers(0, factor)), int(rng.integers(0, factor)))
        problem = bare_problem(SamplingMap.from_factor(shape, factor, offset))
        x = rng.uniform(-1.0, 1.0, shape)
        w = rng.uniform(-1.0, 1.0, problem.smap.lr_shape)
        lhs = float((problem.apply_a(x) * w).sum())
        rhs = float((x * problem.apply_at(w)).sum())
        dec_dev = max(dec_dev, abs(lhs - rhs) / max(1.0, abs(lhs)))

    tv_dev = 0.0
    for _ in range(20):
        shape = (int(rng.integers(2, 20)), int(rng.integers(2, 20)))
        x = rng.uniform(-1.0, 1.0, shape)
        g = rng.uniform(-1.0, 1.0, (2,) + shape)
        lhs = float((tv_forward(x) * g).sum())
        rhs = float((x * tv_adjoint(g)).sum())
        tv_dev = max(tv_dev, abs(lhs - rhs) / max(1.0, abs(lhs)))

    projection_exact = True
    for _ in range(20):
        shape = (int(rng.integers(8, 33)), int(rng.integers(8, 33)))
        factor = int(rng.integers(1, 6))
        problem = bare_problem(SamplingMap.from_factor(shape, factor))
        w = rng.uniform(-1.0, 1.0, problem.smap.lr_shape)
        projection_exact &= bool(
            np.array_equal(problem.apply_a(problem.apply_at(w)), w))

    # The z subproblem decouples per element; an extended-precision
    # golden-section search over each scalar objective must land on the
    # soft threshold.  (float128 evaluation: around a smooth minimum,
    # float64 objective values go flat within ~sqrt(eps) of the minimizer,
    # which is exactly the 1e-8 scale being verified.)
    z_dev = 0.0
    for _ in range(50):
        v = np.float128(rng.uniform(-3.0, 3.0))
        alpha = np.float128(rng.uniform(0.0, 2.0))
        rho = np.float128(rng.uniform(0.2, 3.0))

        def objective(z):
            return alpha * abs(z) + 0.5 * rho * (z - v) ** 2

        bound = float(abs(v) + alpha / rho + 1.0)
        found = golden_section(objective, np.float128(-bound), np.float128(bound),
                               np.float128(1e-13))
        closed = shrink(float(v), float(alpha / rho))
        z_dev = max(z_dev, abs(float(found) - closed))

    table = [(3.0, 1.0, 2.0), (-3.0, 1.0, -2.0), (0.5, 1.0, 0.0),
             (-0.5, 1.0, 0.0), (0.0, 1.0, 0.0), (2.0, 0.0, 2.0),
             (-1.5, 0.25, -1.25)]
    shrink_exact = all(shrink(v, k) == expected for v, k, expected in table)

    report(1, "operator correctness", [
        (dec_dev <= 1e-12, f"decimate adjoint dev {dec_dev:.2e}"),
        (tv_dev <= 1e-12, f"tv adjoint dev {tv_dev:.2e}"),
        (projection_exact, "A A^T = I exact"),
        (z_dev <= 1e-8, f"z-update vs golden section {z_dev:.2e}"),
        (shrink_exact, "shrink table exact"),
    ])


# ---------------------------------------------------------------------------
# 2. Network gradients


def test_2_gradient_check():
    # Full production architecture on a 3-instance batch.  The seed is fixed
    # on a draw where no ReLU pre-activation sits within the finite-difference
    # step of its kink (a kink inside the stencil invalidates the comparison,
    # not the gradient).
    rng = np.random.default_rng(30)
    net = build_network(13, 2, (8, 16, 32), 3, (64, 32), rng)
    x = rng.uniform(0.0, 1.0, (3, 13, 13, 2))
    target = rng.uniform(-1.0, 1.0, 3)

    def loss():
        resid = net.forward(x)[:, 0] - target
        return 0.5 * float(resid @ resid), resid[:, None]

    _, grad_out = loss()
    net.backward(grad_out)
    analytic = [g.copy() for g in net.grads]

    h = 1e-5
    idx_rng = np.random.default_rng(7)
    worst = 0.0
    n_params = 0
    for param, grads in zip(net.params, analytic):
        flat_p, flat_g = param.reshape(-1), grads.reshape(-1)
        for i in idx_rng.choice(flat_p.size, size=min(flat_p.size, 20),
                                replace=False):
            keep = flat_p[i]
            flat_p[i] = keep + h
            up, _ = loss()
            flat_p[i] = keep - h
            dn, _ = loss()
            flat_p[i] = keep
            fd = (up - dn) / (2.0 * h)
            worst = max(worst, abs(fd - flat_g[i]) / (1e-8 + 1e-6 * abs(flat_g[i])))
            n_params += 1

    report(2, "gradient check", [
        (worst <= 1.0,
         f"{n_params} sampled parameters across all {len(analytic)} parameter "
         f"arrays, worst deviation {worst:.2e}x the 1e-6 relative budget"),
    ])


# ---------------------------------------------------------------------------
# 3. Solver sanity


def test_3_solver_sanity():
    checks = []

    # Full sampling, no regularization: the solution is the clamped data.
    # The entry point sees only valid lifetimes (the plane type forbids
    # negatives), so the clamp itself is exercised on a raw problem below.
    rng = np.random.default_rng(3)
    smap = SamplingMap.from_factor((64, 64), 1)
    pos = rng.uniform(0.2, 2.0, (64, 64))
    identity = reconstruct(
        Plane(values=pos, role="lifetime", units="ns"),
        lifetime_plane(np.zeros((64, 64))), None, None, smap,
        ReconstructionConfig(alpha=0.0, beta=0.0, gamma=0.0))
    ident_dev = float(np.abs(identity.plane.values - pos).max())
    checks.append((ident_dev <= 1e-6, f"identity recovery dev {ident_dev:.2e}"))

    b = rng.uniform(-0.5, 2.0, (64, 64))  # negatives exercise the clamp
    problem = dataclasses.replace(bare_problem(smap), b=b)
    cfg = ReconstructionConfig(alpha=0.0, beta=0.0, gamma=0.0, admm_iters=150)
    state = SolverState(tau=np.zeros((64, 64)), z=np.zeros((2, 64, 64)),
                        y=np.zeros((2, 64, 64)))
    for _ in range(cfg.admm_iters):
        primal_update(state, problem, cfg)
        z_update(state, problem)
        dual_update(state, problem)
    clamp_dev = float(np.abs(state.tau - np.maximum(b, 0.0)).max())
    checks.append((clamp_dev <= 1e-6, f"max(b,0) clamp dev {clamp_dev:.2e}"))

    # Overwhelming local-prior weight pins the output to the prior.
    lp = lifetime_plane(1.5 + 0.5 * np.sin(np.arange(64))[:, None]
                        * np.cos(np.arange(64))[None, :])
    smap4 = SamplingMap.from_factor((64, 64), 4)
    lr = sampling.decimate(lifetime_plane(rng.uniform(1.0, 2.0, (64, 64))), smap4)
    pinned = reconstruct(lr, lp, None, None, smap4,
                         ReconstructionConfig(alpha=0.0, beta=0.0, gamma=1e6))
    pin_dev = float(np.abs((pinned.plane.values - lp.values) / lp.values).max())
    checks.append((pin_dev <= 1e-3, f"gamma=1e6 pins to prior, rel dev {pin_dev:.2e}"))

    # The inner subproblem is a positive-definite quadratic when the data
    # keep the minimizer positive; conjugate gradients solve it independently.
    smap16 = SamplingMap.from_factor((16, 16), 4)
    problem = Problem(b=rng.uniform(1.0, 2.0, smap16.lr_shape),
                      valid=np.ones(smap16.lr_shape, bool), smap=smap16,
                      lp=rng.uniform(1.0, 2.0, (16, 16)),
                      gp=rng.uniform(1.0, 2.0, (16, 16)),
                      gp_w=rng.uniform(0.0, 1.0, (16, 16)),
                      alpha=0.1, beta=0.3, gamma=1.0, rho=1.0)
    z = tv_forward(rng.uniform(1.0, 2.0, (16, 16))) * 0.1
    y = rng.uniform(-0.1, 0.1, (2, 16, 16))
    g0 = problem.smooth_grad(np.zeros((16, 16)), z, y)

    def hessian_apply(v):
        return problem.smooth_grad(v.reshape(16, 16), z, y).reshape(-1) - g0.reshape(-1)

    rhs = -g0.reshape(-1)
    x = np.zeros(256)
    r = rhs - hessian_apply(x)
    p, rs = r.copy(), float(r @ r)
    for _ in range(600):
        hp = hessian_apply(p)
        a = rs / float(p @ hp)
        x += a * p
        r -= a * hp
        rs_next = float(r @ r)
        if np.sqrt(rs_next) < 1e-12:
            break
        p = r + (rs_next / rs) * p
        rs = rs_next
    x_cg = x.reshape(16, 16)
    assert x_cg.min() > 0.0  # projection never binds; same problem for both
    state = SolverState(tau=np.full((16, 16), 1.5), z=z, y=y)
    primal_update(state, problem,
                  ReconstructionConfig(alpha=0.1, beta=0.3, gamma=1.0,
                                       fista_iters=800))
    cg_rel = float(np.linalg.norm(state.tau - x_cg) / np.linalg.norm(x_cg))
    checks.append((cg_rel <= 1e-6, f"projected gradient vs CG rel {cg_rel:.2e}"))

    # ADMM residual decay on a realistic scene.
    gt, intens, _ = phantom.make_preset("two-class", size=64, seed=7)
    smap = SamplingMap.from_factor(gt.shape, 4)
    lr = sampling.decimate(gt, smap)
    lp = local_prior.generate_local_prior(lr, intens, smap, LocalPriorConfig())
    result = reconstruct(lr, lp, None, None, smap)
    drop = result.history[0].primal_residual / result.history[-1].primal_residual
    checks.append((drop >= 10.0,
                   f"primal residual falls {drop:.1f}x over "
                   f"{len(result.history)} iterations"))

    report(3, "solver sanity", checks)


# ---------------------------------------------------------------------------
# 4. Local-prior exactness


def test_4_local_prior_exactness():
    gt, intens, meta = phantom.make_preset("affine-local", size=128, seed=7)
    smap = SamplingMap.from_factor(gt.shape, 8)
    lr = sampling.decimate(gt, smap)
    lp = local_prior.generate_local_prior(lr, intens, smap, LocalPriorConfig())

    affine = meta["tau_slope"] * intens.values + meta["tau_intercept"]
    affine_dev = float(np.abs(lp.values - affine).max())

    rows, cols = smap.sample_rows(), smap.sample_cols()
    consistent = bool(np.array_equal(lp.values[np.ix_(rows, cols)], lr.values))

    report(4, "local-prior exactness", [
        (affine_dev <= 1e-9,
         f"prior equals the affine law at all {lp.values.size} pixels, "
         f"max dev {affine_dev:.2e}"),
        (consistent, "prior reproduces every sampled lifetime exactly"),
    ])


# ---------------------------------------------------------------------------
# 5. Global-prior learning


def test_5_global_prior_learning():
    gt, intens, _ = phantom.make_preset("two-class", size=192, seed=7)
    smap = SamplingMap.from_factor(gt.shape, 8)
    lr = sampling.decimate(gt, smap)
    cfg = GlobalPriorConfig()  # full protocol: 150 epochs, batch 100

    ps = extract_patches(intens, lr, smap, cfg)
    n_labeled = ps.labeled_count
    plain = augment(ps, smap, dataclasses.replace(cfg, neighbor_augment=False))
    full = augment(ps, smap, cfg)  # factor 8 resolves to neighbor augmentation
    counts_exact = len(plain) == 8 * n_labeled and len(full) == 72 * n_labeled

    # Hold out 20% of the labeled patches entirely; train on the rest.
    labeled_idx = np.flatnonzero(ps.labeled_mask)
    order = np.random.default_rng(42).permutation(labeled_idx.size)
    held = labeled_idx[order[:int(round(0.2 * labeled_idx.size))]]
    train_labels = ps.labels.copy()
    train_labels[held] = np.nan
    training = augment(dataclasses.replace(ps, labels=train_labels), smap, cfg)
    predictor = train_predictor(training, cfg, seed=0)

    held_pred = predictor.predict(ps.patches[held])
    held_mae = float(np.abs(held_pred - ps.labels[held]).mean())

    prior, weight = predict_global_prior(predictor, ps, smap.hr_shape)
    interior = weight.values == 1.0
    accuracy = float((nearest_class(prior.values)[interior]
                      == gt.values[interior]).mean())

    # Bit-reproducibility of seeded training, on a small scene so the double
    # training stays cheap.
    gt_s, intens_s, _ = phantom.make_preset("two-class", size=64, seed=11)
    smap_s = SamplingMap.from_factor(gt_s.shape, 8)
    lr_s = sampling.decimate(gt_s, smap_s)
    small_cfg = dataclasses.replace(cfg, epochs=4, n_inits=1)
    first = train_global_prior(lr_s, intens_s, smap_s, small_cfg, seed=1)
    second = train_global_prior(lr_s, intens_s, smap_s, small_cfg, seed=1)
    bitwise = bool(np.array_equal(first.prior.values, second.prior.values)
                   and np.array_equal(first.weight.values, second.weight.values))

    report(5, "global-prior learning", [
        (held_mae < 0.3, f"held-out MAE {held_mae:.4f} ns over {held.size} patches"),
        (accuracy >= 0.95,
         f"nearest-class accuracy {accuracy:.4f} over {int(interior.sum())} "
         f"in-bounds pixels"),
        (counts_exact, f"augmentation counts exact: {len(plain)} = 8x{n_labeled}, "
                       f"{len(full)} = 72x{n_labeled}"),
        (bitwise, "seeded training bitwise-reproducible"),
    ])


# ---------------------------------------------------------------------------
# 6. End-to-end quality vs the bilinear baseline


def run_quality_pipeline(tmp_path, preset, size, out_name):
    config = {
        "phantom_preset": preset, "size": str(size), "phantom_seed": "7",
        "factor": "8", "gp_epochs": "40", "gp_n_inits": "1",
    }
    return cli.run_pipeline(config, tmp_path / out_name)


def test_6_end_to_end_superiority(tmp_path):
    smooth = run_quality_pipeline(tmp_path, "two-class", 256, "smooth")
    s, b = smooth["sisifus"], smooth["bilinear"]
    rough = run_quality_pipeline(tmp_path, "rough", 128, "rough")
    rs, rb = rough["sisifus"], rough["bilinear"]

    report(6, "end-to-end superiority", [
        (s["psnr"] >= b["psnr"] + 1.0,
         f"two-class 256 at 8x: psnr {s['psnr']:.2f} vs bilinear {b['psnr']:.2f} dB"),
        (s["mae"] <= b["mae"],
         f"mae {s['mae']:.5f} vs bilinear {b['mae']:.5f} ns"),
        (rs["psnr"] >= rb["psnr"] - 0.2,
         f"rough 128 at 8x fail-safe: psnr {rs['psnr']:.2f} vs bilinear "
         f"{rb['psnr']:.2f} dB"),
    ])


# ---------------------------------------------------------------------------
# 7. Degradation under extreme undersampling


def test_7_undersampling_degradation(tmp_path):
    # The dense variant of the two-class scene: structures small enough that
    # coarse grids undersample them, so quality degrades with the factor
    # across the whole sweep instead of saturating at the prior ceiling.
    factors = [2, 4, 8, 16, 64]
    config = {
        "phantom_preset": "undersampled", "size": "128", "phantom_seed": "7",
        "gp_epochs": "30", "gp_n_inits": "1",
    }
    rows = cli.sweep_undersampling(config, factors, tmp_path / "sweep")
    psnrs = [row["psnr"] for row in rows]
    ties = 0.2  # dB; adjacent factors may sit at the same prior ceiling
    monotone = all(nxt <= prev + ties for prev, nxt in zip(psnrs, psnrs[1:]))

    gt, _, _ = phantom.make_preset("undersampled", size=128, seed=7)
    sr = fileio.read_plane(tmp_path / "sweep" / "factor_64" / "sr.fbin")
    accuracy = float((nearest_class(sr.values) == gt.values).mean())

    trend = ", ".join(f"{f}x {p:.2f}" for f, p in zip(factors, psnrs))
    report(7, "undersampling degradation", [
        (monotone, f"psnr non-increasing ({trend} dB)"),
        (psnrs[0] - psnrs[-1] > 20.0,
         f"total drop {psnrs[0] - psnrs[-1]:.1f} dB"),
        (accuracy < 0.70, f"factor-64 class recovery fails: accuracy {accuracy:.3f}"),
    ])


# ---------------------------------------------------------------------------
# 8. Measured-dataset reproduction (opt-in)


MEASURED_DIR = os.environ.get("SISIFUS_MDCK_DIR", "")


@pytest.mark.skipif(not MEASURED_DIR, reason="set SISIFUS_MDCK_DIR to a directory "
                    "with gt_tau.fbin and intensity.fbin to run the measured-data "
                    "reproduction")
def test_8_measured_dataset_reproduction(tmp_path):
    config = {
        "gt_tau": os.path.join(MEASURED_DIR, "gt_tau.fbin"),
        "intensity": os.path.join(MEASURED_DIR, "intensity.fbin"),
        "factor": "16",
    }
    payload = cli.run_pipeline(config, tmp_path / "measured")
    s, b = payload["sisifus"], payload["bilinear"]
    report(8, "measured-dataset reproduction", [
        (abs(s["psnr"] - 26.0) <= 2.0, f"psnr {s['psnr']:.2f} dB vs 26 +- 2"),
        (abs(s["ssim"] - 0.31) <= 0.1, f"ssim {s['ssim']:.3f} vs 0.31 +- 0.1"),
        (abs(b["psnr"] - 24.0) <= 1.0,
         f"bilinear psnr {b['psnr']:.2f} dB vs 24 +- 1"),
    ])


# ---------------------------------------------------------------------------
# 9. Lifetime-fit accuracy


def mle_grid(counts: np.ndarray, bins: int, bin_width: float) -> np.ndarray:
    """Maximum-likelihood lifetimes by grid search over the truncated model."""
    taus = np.arange(0.1, 10.0 + 5e-4, 0.001)
    edges = np.arange(bins + 1) * bin_width
    decay = np.exp(-edges[None, :] / taus[:, None])
    p = (decay[:, :-1] - decay[:, 1:]) / (1.0 - decay[:, -1:])
    log_p = np.log(np.maximum(p, 1e-300))
    ll = counts @ log_p.T
    return taus[np.argmax(ll, axis=1)]


def test_9_lifetime_fit_accuracy():
    true_tau, photons, bins, width = 2.0, 1e4, 150, 0.1
    shape = (40, 40)
    cube = phantom.generate_datacube(
        lifetime_plane(np.full(shape, true_tau)),
        Plane(values=np.full(shape, photons), role="intensity", units="photons"),
        bins=bins, bin_width=width, seed=11)
    fit = lifetime.fit_lifetime(cube)
    rel_err = np.abs(fit.values - true_tau) / true_tau
    median_err = float(np.median(rel_err))

    flat = cube.counts.reshape(-1, bins).astype(np.float64)
    subset = np.random.default_rng(5).choice(flat.shape[0], size=200, replace=False)
    oracle = mle_grid(flat[subset], bins, width)
    agreement = float(np.median(
        np.abs(fit.values.reshape(-1)[subset] - oracle) / oracle))

    report(9, "lifetime-fit accuracy", [
        (np.isfinite(fit.values).all(), "every pixel fitted"),
        (median_err < 0.03,
         f"median relative error {median_err:.4f} at {photons:.0f} photons"),
        (agreement < 0.03,
         f"median deviation from the likelihood-grid oracle {agreement:.4f} "
         f"over {subset.size} pixels"),
    ])
