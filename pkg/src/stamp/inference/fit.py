"""End-to-end fitting: assembly, hyperparameter exploration, constrained sampling, bundles."""

from __future__ import annotations

import io
import json
import time
import zipfile
from dataclasses import dataclass, field

import numpy as np

from .. import shotgrid as sg
from ..errors import EmptyData, StampError
from ..lgm.config import ModelConfig
from ..lgm.layout import ConstraintSet, LatentLayout, assemble_layout, natural_from_theta
from .explore import Exploration, ExplorationPoint, explore_hyperparameters
from .gaussian import LatentModel, gaussian_at

BUNDLE_VERSION = 1
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


def sample_latent(model: LatentModel, points: list[ExplorationPoint], J: int, seed) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``J`` constrained latent samples from the weighted mixture of Gaussian approximations.

    Returns ``(samples (J, n_latent), source point ids (J,))``. The point
    choices and all standard normals are drawn up front, so the result
    depends only on ``seed`` and the points.
    """
    if J < 1:
        raise ValueError("J must be at least 1")
    rng = np.random.default_rng(seed)
    w = np.array([p.weight for p in points], dtype=float)
    source = rng.choice(len(points), size=J, p=w / w.sum())
    Z = rng.standard_normal((J, model.n))
    out = np.empty((J, model.n))
    for k in np.unique(source):
        rows = np.flatnonzero(source == k)
        approx = gaussian_at(model, points[k].theta, points[k].mode)
        out[rows] = approx.sample(Z[rows].T).T
    return out, source.astype(np.int64)


@dataclass
class PosteriorFit:
    config: ModelConfig
    index: sg.CellIndex
    thetas: np.ndarray
    log_post: np.ndarray
    weights: np.ndarray
    modes: np.ndarray = field(repr=False)
    samples: np.ndarray = field(repr=False)
    source: np.ndarray = field(repr=False)
    seed: int = 0
    n_evals: int = 0
    strategy: str = "ccd"
    timing: dict = field(default_factory=dict, compare=False)
    _layout: tuple | None = field(default=None, repr=False, compare=False)

    @property
    def J(self) -> int:
        return self.samples.shape[0]

    def layout(self) -> tuple[LatentLayout, ConstraintSet]:
        if self._layout is None:
            self._layout = assemble_layout(self.config, self.index)
        return self._layout

    def eta_samples(self, cells=None) -> np.ndarray:
        """Linear predictor per sample, shape (J, n_cells)."""
        X = self.layout()[0].design
        if cells is not None:
            X = X[np.asarray(cells)]
        return np.asarray((X @ self.samples.T).T)

    def block_samples(self, name: str) -> np.ndarray:
        """Samples of one latent block reshaped to (J, *block shape)."""
        b = self.layout()[0].block(name)
        return self.samples[:, b.start : b.stop].reshape((self.J,) + tuple(b.shape))

    def hyper_summary(self) -> dict[str, dict[str, float]]:
        """Weighted posterior mean and sd of each natural-scale hyperparameter (sigma_*, rho_*)."""
        lay = self.layout()[0]
        nat = [natural_from_theta(t, lay) for t in self.thetas]
        out = {}
        for key in (nat[0] if nat else {}):
            v = np.array([d[key] for d in nat])
            m = float(self.weights @ v)
            out[key] = {"mean": m, "sd": float(np.sqrt(max(self.weights @ (v - m) ** 2, 0.0)))}
        return out

    def max_residual(self) -> float:
        A = self.layout()[1].A
        if A.shape[0] == 0:
            return 0.0
        return float(np.max(np.abs(A @ self.samples.T)))

    # -- bundle ---------------------------------------------------------------------

    def to_bytes(self) -> bytes:
        """Deterministic zip bundle; wall-clock timing is deliberately left out."""
        meta = {
            "version": BUNDLE_VERSION,
            "seed": int(self.seed),
            "n_evals": int(self.n_evals),
            "strategy": self.strategy,
            "teams": [str(t) for t in self.index.teams],
            "seasons": [str(s) for s in self.index.seasons],
        }
        arrays = {
            "thetas": self.thetas, "log_post": self.log_post, "weights": self.weights,
            "modes": self.modes, "samples": self.samples, "source": self.source,
        }
        buf = io.BytesIO()
        with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_DEFLATED) as zf:
            _put(zf, "meta.json", json.dumps(meta, sort_keys=True, indent=1).encode())
            _put(zf, "config.txt", self.config.to_text().encode())
            for name, arr in arrays.items():
                b = io.BytesIO()
                np.save(b, np.ascontiguousarray(arr), allow_pickle=False)
                _put(zf, name + ".npy", b.getvalue())
        return buf.getvalue()

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def from_bytes(cls, data: bytes) -> "PosteriorFit":
        with zipfile.ZipFile(io.BytesIO(data)) as zf:
            meta = json.loads(zf.read("meta.json"))
            if meta.get("version") != BUNDLE_VERSION:
                raise StampError(f"unsupported bundle version {meta.get('version')}")
            config = ModelConfig.from_text(zf.read("config.txt").decode())
            arr = {n: np.load(io.BytesIO(zf.read(n + ".npy")), allow_pickle=False)
                   for n in ("thetas", "log_post", "weights", "modes", "samples", "source")}
        index = sg.CellIndex(meta["teams"], meta["seasons"])
        return cls(config, index, seed=meta["seed"], n_evals=meta["n_evals"], strategy=meta["strategy"], **arr)

    @classmethod
    def load(cls, path) -> "PosteriorFit":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def _put(zf: zipfile.ZipFile, name: str, data: bytes):
    info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def fit(config: ModelConfig, data: sg.CountsAndExposure, J: int = 400, seed: int = 0,
        strategy: str = "ccd", theta_fixed=None, **explore_kw) -> PosteriorFit:
    """Fit one configuration to (regular-season) data and draw ``J`` posterior samples."""
    if data.index.n_cells == 0 or data.index.n_teams == 0:
        raise EmptyData("no cells to fit")
    t0 = time.perf_counter()
    try:
        layout, cons = assemble_layout(config, data.index)
        model = LatentModel(layout, cons, data)
        t1 = time.perf_counter()
        expl: Exploration = explore_hyperparameters(model, strategy=strategy, theta_fixed=theta_fixed, **explore_kw)
        t2 = time.perf_counter()
        samples, source = sample_latent(model, expl.points, J, seed)
    except StampError as exc:
        exc.args = (f"[{config.label()}] {exc.args[0] if exc.args else ''}",) + exc.args[1:]
        raise
    t3 = time.perf_counter()
    pts = expl.points
    p = layout.n_hyper
    return PosteriorFit(
        config=config,
        index=data.index,
        thetas=np.array([q.theta for q in pts]).reshape(len(pts), p),
        log_post=np.array([q.log_post for q in pts]),
        weights=np.array([q.weight for q in pts]),
        modes=np.array([q.mode for q in pts]),
        samples=samples,
        source=source,
        seed=int(seed),
        n_evals=expl.n_evals,
        strategy=expl.strategy,
        timing={"assemble": t1 - t0, "explore": t2 - t1, "sample": t3 - t2, "total": t3 - t0},
        _layout=(layout, cons),
    )
