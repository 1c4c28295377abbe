"""The optimizer loop: sampling, curvature assembly, direction, update, pairs, metrics."""
import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np

from .curvature import GRADIENT_SET, HESSIAN_SET, build_base, draw_sample_set
from .errors import NonFiniteLoss, NotConverged, RankDeficientU, ZeroStep
from .linalg import CholeskyFactor
from .models.pairs import B1, B2, extract_kron_pairs
from .refinement import (ACCEPTED, DAMPED, EPS_B, BlockRefinement, PairBuffer, SketchConfig, accept_pair,
                         block_bfgs_update, build_compact, curvature_ok, default_gamma, make_pair,
                         make_structured_pair, prune_columns, sketchy_block_bfgs_update)
from .schedule import ScheduleConfig
from .solver import RegularizedSystem, direction_block, solve_with_retry

METHODS = ("sgd-baseline", "ssn", "s4qn", "s2qn", "skqn-l", "skqn-b1", "skqn-b2")
DEFAULT_BASE = {"ssn": "hessian", "s4qn": "hessian", "s2qn": "ggn",
                "skqn-l": "kfac", "skqn-b1": "kfac", "skqn-b2": "kfac"}
CSV_HEADER = ("k", "epoch", "loss", "gnorm", "fullgnorm", "relerr", "lambda", "sg", "sh", "pair", "ms")

# per-block pair codes written to the ``pair`` column
PAIR_CODES = {ACCEPTED: "a", DAMPED: "d", "rejected": "r", "zero": "z", None: "-"}


@dataclass(frozen=True)
class EngineOptions:
    """Everything the loop needs besides the problem and starting point.

    ``probe_interval`` is in epochs; 0 probes the full gradient after every
    iteration. ``lambda_mode="fixed"`` replaces the adaptive rule by the
    constant ``lambda_fixed`` (the unregularized local iteration uses a
    tiny value).
    """

    method: str = "s4qn"
    base: str | None = None
    memory: int = 5
    eps_b: float = EPS_B
    damping: bool = True
    pair_mode: str = "secant"
    strict_refresh: bool = False
    gamma_rule: str = "vv/uv"
    p_choice: str = "sym"
    sketch: SketchConfig | None = None
    block_init: float = 1e-3
    kron_mode: str = "exact"
    spatial_average: bool = True
    lambda_mode: str = "adaptive"
    lambda_fixed: float = 1e-10
    schedule: ScheduleConfig = ScheduleConfig()
    seed: int = 0
    max_epochs: float = 10.0
    max_iters: int | None = None
    tol: float = 0.0
    probe_interval: float = 0.0
    wall_budget: float | None = None
    record_time: bool = False
    keep_iterates: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.pair_mode not in ("secant", "structured"):
            raise ValueError(f"unknown pair mode {self.pair_mode!r}")
        if self.lambda_mode not in ("adaptive", "fixed"):
            raise ValueError(f"unknown lambda mode {self.lambda_mode!r}")
        if self.memory < 1:
            raise ValueError("memory must be at least 1")

    @property
    def base_kind(self):
        if self.method == "sgd-baseline":
            return None
        return self.base or DEFAULT_BASE[self.method]

    @property
    def vector_pairs(self):
        return self.method in ("s4qn", "s2qn", "skqn-l")

    @property
    def block_pairs(self):
        return self.method in ("skqn-b1", "skqn-b2")


@dataclass
class OptimizerState:
    theta: np.ndarray
    k: int = 0
    epoch: float = 0.0
    gnorm_prev: float | None = None
    buffers: list = field(default_factory=list)
    block_refs: list = field(default_factory=list)
    # gradient at theta on the previous gradient set, reusable when the set repeats
    carry: tuple | None = None


@dataclass
class RunRecord:
    rows: list = field(default_factory=list)
    theta: np.ndarray | None = None
    stop_reason: str = ""
    iterates: list = field(default_factory=list)
    initial: dict = field(default_factory=dict)

    def to_csv(self):
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow([_fmt(r[h]) for h in CSV_HEADER])
        return out.getvalue()

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())

    def column(self, name):
        return np.array([np.nan if r[name] is None else r[name] for r in self.rows], dtype=np.float64)


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def read_metrics_csv(path):
    """Parse a metrics file back into a list of dicts (numbers as floats)."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and tuple(rows[0].keys()) != CSV_HEADER:
        raise ValueError(f"unexpected metrics header in {path}")
    out = []
    for r in rows:
        out.append({h: (r[h] if h == "pair" else (float(r[h]) if r[h] != "" else None)) for h in CSV_HEADER})
    return out


class Engine:
    def __init__(self, problem, options, psi_star=None):
        self.problem = problem
        self.opt = options
        self.psi_star = psi_star
        self.N = problem.n_samples
        self.n = problem.n_params
        if options.base_kind == "kfac" or options.method.startswith("skqn"):
            layers = problem.layers
            self.blocks = [L.slice for L in layers]
            self.layers = layers
        else:
            self.blocks = [slice(0, self.n)]
            self.layers = None
        if options.method.startswith("skqn") and options.base_kind != "kfac":
            raise ValueError(f"{options.method} needs the kfac base")
        self._needs_cache = options.method == "skqn-b2" or options.base_kind == "kfac"

    def initial_state(self, theta0):
        theta0 = np.array(theta0, dtype=np.float64)
        if theta0.shape != (self.n,):
            raise ValueError(f"theta0 has shape {theta0.shape}, expected ({self.n},)")
        st = OptimizerState(theta0)
        if self.opt.vector_pairs:
            st.buffers = [PairBuffer(self.opt.memory, self.opt.eps_b) for _ in self.blocks]
        if self.opt.block_pairs:
            st.block_refs = [BlockRefinement.identity(L.m_G, self.opt.block_init) for L in self.layers]
        return st

    # ------------------------------------------------------------------ sampling
    def sample_sets(self, k):
        sch = self.opt.schedule
        S_g = draw_sample_set(self.N, sch.grad_batch.size(k, self.N), self.opt.seed, k, GRADIENT_SET)
        S_H = draw_sample_set(self.N, sch.hess_batch.size(k, self.N), self.opt.seed, k, HESSIAN_SET)
        return S_g, S_H

    def _eval(self, theta, S):
        if self._needs_cache:
            loss, g, cache = self.problem.forward_backward(theta, S.indices)
        else:
            loss, g = self.problem.loss_grad(theta, S.indices)
            cache = None
        if not (np.isfinite(loss) and np.all(np.isfinite(g))):
            raise NonFiniteLoss(f"non-finite loss or gradient ({loss!r})")
        return loss, g, cache

    # ------------------------------------------------------------------ curvature
    def _bases(self, theta, S_H, cache_g, S_g):
        kind = self.opt.base_kind
        if kind is None:
            return [None]
        cache = cache_g if (cache_g is not None and np.array_equal(S_g.indices, S_H.indices)) else None
        base = build_base(kind, self.problem, theta, S_H, cache=cache, spatial_average=self.opt.spatial_average)
        return base if isinstance(base, list) else [base]

    def _refresh(self, buf, base):
        """Recompute the residual ``v = v_hat - H_k u`` of the newest pair (all
        pairs in strict mode); pairs that then fail the curvature test are dropped."""
        if not buf.pairs or buf.pairs[-1].v_hat is None:
            return
        buf.refresh(base, newest_only=not self.opt.strict_refresh)
        kept = [p for p in buf.pairs if curvature_ok(p.u, p.v, buf.eps_b)]
        if len(kept) != len(buf.pairs):
            buf.pairs.clear()
            buf.pairs.extend(kept)

    def _refinements(self, st, bases):
        if self.opt.vector_pairs:
            refs = []
            for buf, base, sl in zip(st.buffers, bases, self.blocks):
                self._refresh(buf, base)
                if buf.pairs:
                    refs.append(build_compact(buf, default_gamma(buf, rule=self.opt.gamma_rule), n=sl.stop - sl.start))
                else:
                    refs.append(None)
            return refs
        if self.opt.block_pairs:
            return list(st.block_refs)
        return [None] * len(bases)

    # ------------------------------------------------------------------ pairs
    def _vector_pairs(self, st, theta, theta_new, g, g_new, bases, refs, S_H):
        codes = []
        for b, (sl, buf, base, ref) in enumerate(zip(self.blocks, st.buffers, bases, refs)):
            try:
                if self.opt.pair_mode == "structured":
                    pair = make_structured_pair(self.problem, theta, theta_new, S_H)
                    if len(self.blocks) > 1:
                        pair = type(pair)(pair.u[sl], None, pair.v[sl])
                else:
                    pair = make_pair(theta[sl], theta_new[sl], g[sl], g_new[sl], base)
            except ZeroStep:
                codes.append("zero")
                continue
            apply_ref = ref.apply if ref is not None else None
            status, _ = accept_pair(pair, buf, apply_ref, damping=self.opt.damping)
            codes.append(status)
        return codes

    def _block_pairs(self, st, k, theta, theta_new, g, g_new, bases, cache_prev, cache_next):
        codes = []
        mode = B1 if self.opt.method == "skqn-b1" else B2
        for l, (sl, base) in enumerate(zip(self.blocks, bases)):
            u = theta_new[sl] - theta[sl]
            if not np.any(u):
                codes.append("zero")
                continue
            U, V = extract_kron_pairs(cache_prev, cache_next, mode, base.payload, layer=l,
                                      u=u, v_hat=g_new[sl] - g[sl])
            U, V = prune_columns(U, V)
            if U.shape[1] == 0:
                codes.append("rejected")
                continue
            old = st.block_refs[l]
            try:
                if self.opt.sketch is not None and self.opt.sketch.dim < U.shape[1]:
                    new = sketchy_block_bfgs_update(old, U, V, self.opt.sketch, self.opt.p_choice,
                                                    self.opt.damping, key=(self.opt.seed, k, l))
                else:
                    new = block_bfgs_update(old, U, V, self.opt.p_choice, self.opt.damping)
            except (RankDeficientU, np.linalg.LinAlgError):
                codes.append("rejected")
                continue
            if not np.all(np.isfinite(new.Lam)) or np.linalg.eigvalsh(new.Lam)[0] <= 0:
                codes.append("rejected")
                continue
            st.block_refs[l] = new
            codes.append(ACCEPTED)
        return codes

    # ------------------------------------------------------------------ step
    def step(self, st):
        """One iteration; mutates and returns ``st`` together with the metrics row."""
        t0 = time.perf_counter()
        opt, k = self.opt, st.k
        sch = opt.schedule
        S_g, S_H = self.sample_sets(k)
        theta = st.theta

        if st.carry is not None and np.array_equal(st.carry[0], S_g.indices):
            loss, g, cache = st.carry[1:]
        else:
            loss, g, cache = self._eval(theta, S_g)
            st.epoch += len(S_g) / self.N

        alpha = sch.alpha_k(k)
        beta = sch.beta_k(k)
        if opt.method == "sgd-baseline":
            lam = None
            d = -alpha * g
            refs, bases = [None], [None]
        else:
            bases = self._bases(theta, S_H, cache, S_g)
            refs = self._refinements(st, bases)
            if opt.lambda_mode == "fixed":
                lam0 = opt.lambda_fixed
            else:
                lam0 = sch.lambda_k(k, st.gnorm_prev)
            systems = [RegularizedSystem(b, r, lam0) for b, r in zip(bases, refs)]
            d, lam, _ = solve_with_retry(
                lambda lam_: direction_block([s.with_lam(lam_) for s in systems], g, opt.kron_mode), lam0)

        theta_new = theta + beta * d
        if not np.all(np.isfinite(theta_new)):
            raise NonFiniteLoss("parameters became non-finite")
        loss_new, g_new, cache_new = self._eval(theta_new, S_g)
        st.epoch += len(S_g) / self.N

        if opt.vector_pairs:
            codes = self._vector_pairs(st, theta, theta_new, g, g_new, bases, refs, S_H)
        elif opt.block_pairs:
            codes = self._block_pairs(st, k, theta, theta_new, g, g_new, bases, cache, cache_new)
        else:
            codes = [None]

        gnorm = float(np.linalg.norm(g))
        st.theta = theta_new
        st.gnorm_prev = gnorm
        st.carry = (S_g.indices, loss_new, g_new, cache_new)
        st.k = k + 1
        row = {
            "k": k, "epoch": float(st.epoch), "loss": float(loss_new), "gnorm": gnorm,
            "fullgnorm": None, "relerr": None, "lambda": None if lam is None else float(lam),
            "sg": len(S_g), "sh": len(S_H) if opt.base_kind else 0,
            "pair": "".join(PAIR_CODES[c] for c in codes),
            "ms": round((time.perf_counter() - t0) * 1e3, 3) if opt.record_time else 0,
        }
        return st, row

    # ------------------------------------------------------------------ probes
    def probe(self, theta, st=None):
        """Full objective and gradient norm; reuses the carried evaluation when it was full-batch."""
        if st is not None and st.carry is not None and len(st.carry[0]) == self.N \
                and np.array_equal(st.carry[0], np.arange(self.N)):
            loss, g = st.carry[1], st.carry[2]
        else:
            loss, g = self.problem.loss_grad(theta, self.problem.all_indices())
        relerr = None
        if self.psi_star is not None:
            relerr = (loss - self.psi_star) / max(1.0, self.psi_star)
        return float(loss), float(np.linalg.norm(g)), relerr

    def run(self, theta0):
        opt = self.opt
        st = self.initial_state(theta0)
        rec = RunRecord()
        loss0, gn0, rel0 = self.probe(st.theta)
        rec.initial = {"loss": loss0, "fullgnorm": gn0, "relerr": rel0}
        if opt.keep_iterates:
            rec.iterates.append(st.theta.copy())
        start = time.perf_counter()
        next_probe = 0.0
        reason = "max-epochs"
        if opt.tol > 0 and gn0 <= opt.tol:
            reason = "tol"
        while reason != "tol":
            if st.epoch >= opt.max_epochs:
                reason = "max-epochs"
                break
            if opt.max_iters is not None and st.k >= opt.max_iters:
                reason = "max-iters"
                break
            if opt.wall_budget is not None and time.perf_counter() - start > opt.wall_budget:
                reason = "wall-budget"
                break
            st, row = self.step(st)
            if opt.keep_iterates:
                rec.iterates.append(st.theta.copy())
            if st.epoch >= next_probe:
                loss, gn, rel = self.probe(st.theta, st)
                row["fullgnorm"], row["relerr"] = gn, rel
                next_probe = st.epoch + opt.probe_interval
                rec.rows.append(row)
                if opt.tol > 0 and gn <= opt.tol:
                    reason = "tol"
            else:
                rec.rows.append(row)
        rec.theta = st.theta
        rec.stop_reason = reason
        return rec


def step(state, problem, options, psi_star=None):
    return Engine(problem, options, psi_star).step(state)


def run(options, problem, theta0, psi_star=None):
    return Engine(problem, options, psi_star).run(theta0)


def compute_reference_optimum(problem, theta0=None, tol=1e-12, max_iter=100):
    """Full-batch Newton with backtracking down to ``||grad Psi|| <= tol``.

    Needs an exact Hessian and a strongly convex objective. Returns
    ``(theta_star, psi_star)``.
    """
    idx = problem.all_indices()
    theta = np.zeros(problem.n_params) if theta0 is None else np.array(theta0, dtype=np.float64)
    f, g = problem.loss_grad(theta, idx)
    for _ in range(max_iter):
        if np.linalg.norm(g) <= tol:
            return theta, float(f)
        d = -CholeskyFactor(problem.hessian(theta, idx)).solve(g)
        t, slope = 1.0, float(g @ d)
        while True:
            f_new, g_new = problem.loss_grad(theta + t * d, idx)
            # near the optimum f stalls at rounding level, so a smaller gradient also counts
            if f_new <= f + 1e-4 * t * slope or np.linalg.norm(g_new) < 0.5 * np.linalg.norm(g) or t < 1e-10:
                break
            t *= 0.5
        theta, f, g = theta + t * d, f_new, g_new
    if np.linalg.norm(g) <= tol:
        return theta, float(f)
    raise NotConverged(f"Newton stopped at ||grad|| = {np.linalg.norm(g):.3e} after {max_iter} iterations")
