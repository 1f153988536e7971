"""Stage runners behind the command line: simulate, reconstruct, segment,
features, analyze, and the full chain.

All state lives in the output directory. ``manifest.json`` records the
resolved configuration, its hash, every file with its SHA-256 digest, the
per-stage inputs and outputs, and the status of each nucleus. Outputs carry
no timestamps or absolute paths, so identical configurations give
byte-identical CSV and JSON files.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import __version__
from . import io as qio
from .analyze import (KMO_FORMULA, explained_variance, kmo, pca, project, silhouette,
                      stability_curve)
from .config import PipelineConfig, config_from_dict
from .errors import (CalibrationError, DegenerateColumnError, InvalidInputError, QpiError,
                     SingularMatrixError, StageError)
from .features import BRIGHTFIELD_FEATURES, FEATURE_NAMES, extract_all
from .holo_sim import (PhantomSpec, calibration_hologram, make_phantom, simulate_hologram)
from .recon import calibrate_reference, fourier_reconstruct, optimize_reconstruct, wrapped_phase
from .segment import RoiSpec, segment_nucleus
from .unwrap import unwrap_phase

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
METHODS = ("opt", "fourier")
COLUMN_SETS = {"all": FEATURE_NAMES, "brightfield": BRIGHTFIELD_FEATURES}
TRACE_HEADER = ("iteration", "c1", "c2", "total", "delta", "step_c1", "step_c2")


# --------------------------------------------------------------------------- manifest


class Run:
    """An output directory plus its manifest."""

    def __init__(self, out, cfg: Optional[PipelineConfig] = None):
        self.root = Path(out)
        path = self.root / MANIFEST
        self.manifest = json.loads(path.read_text(encoding="utf-8")) if path.exists() else None
        if cfg is None:
            if self.manifest is None:
                raise InvalidInputError(f"{self.root} holds no {MANIFEST}; run simulate first or pass --config")
            cfg = config_from_dict(self.manifest["config"])
        self.cfg = cfg

    @property
    def nuclei(self) -> list[dict]:
        if self.manifest is None:
            raise InvalidInputError(f"{self.root} holds no {MANIFEST}; run simulate first")
        return self.manifest["nuclei"]

    def path(self, rel: str) -> Path:
        return self.root / rel

    def rel(self, p: Path) -> str:
        return p.relative_to(self.root).as_posix()

    def start(self, fresh: bool = False):
        if fresh or self.manifest is None:
            self.manifest = {
                "tool": "qpicell",
                "tool_version": __version__,
                "config_hash": self.cfg.hash(),
                "config": _config_record(self.cfg),
                "status": "incomplete",
                "stages": {},
                "nuclei": [],
                "files": {},
            }
        else:
            self.manifest["status"] = "incomplete"
        self.save()

    def record_stage(self, name: str, inputs: Sequence[Path], outputs: Sequence[Path], **extra):
        entry = {
            "status": "ok",
            "inputs": {self.rel(p): qio.sha256_file(p) for p in inputs},
            "outputs": {self.rel(p): qio.sha256_file(p) for p in outputs},
        }
        entry.update(extra)
        self.manifest["stages"][name] = entry
        self.save()

    def mark_nucleus(self, idx: int, stage: str, error: Optional[str]):
        n = self.nuclei[idx]
        n["stages"][stage] = "ok" if error is None else f"dropped: {error}"
        if error is not None and n["status"] == "ok":
            n["status"] = "dropped"
            n["reason"] = f"{stage}: {error}"

    def alive(self) -> list[int]:
        return [i for i, n in enumerate(self.nuclei) if n["status"] == "ok"]

    def check_drops(self, stage: str):
        total = len(self.nuclei)
        dropped = total - len(self.alive())
        limit = self.cfg.analysis.max_drop_fraction
        if total and dropped / total > limit:
            self.save()
            raise StageError(stage, f"{dropped} of {total} nuclei dropped, more than {limit:.0%}")

    def finish(self, complete: bool = True):
        self.manifest["status"] = "complete" if complete else "incomplete"
        self.save()

    def save(self):
        """Rewrite the manifest with an up-to-date digest of every file in the directory."""
        self.root.mkdir(parents=True, exist_ok=True)
        files = {}
        for p in sorted(self.root.rglob("*")):
            if p.is_file() and p.name != MANIFEST:
                files[self.rel(p)] = qio.sha256_file(p)
        self.manifest["files"] = files
        qio.write_json(self.root / MANIFEST, self.manifest)


def _config_record(cfg: PipelineConfig) -> dict:
    d = cfg.to_dict()
    d.pop("output_dir")
    d.pop("threads")
    return d


def _map(fn: Callable, items: Sequence, threads: int) -> list:
    """Apply ``fn`` to every item; results come back in input order."""
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _guard(fn: Callable, expected=(QpiError, ArithmeticError)):
    """Turn per-nucleus failures into ``(None, message)`` instead of exceptions."""

    def wrapped(arg):
        try:
            return fn(arg), None
        except expected as exc:
            return None, f"{type(exc).__name__}: {exc}"

    return wrapped


# --------------------------------------------------------------------------- simulate


def sample_population(cfg: PipelineConfig) -> list[dict]:
    """Draw per-nucleus parameters and seeds for the configured population."""
    rng = np.random.default_rng(cfg.seed)
    out = []
    for entry in cfg.population:
        for _ in range(entry.count):
            radius = float(rng.uniform(*entry.nucleus_radius))
            peak = float(rng.uniform(*entry.peak_phase))
            texture = float(rng.uniform(*entry.texture_amplitude))
            jitter = rng.normal(0.0, entry.color_jitter, 3) if entry.color_jitter > 0 else np.zeros(3)
            color = [float(np.clip(c + j, 0.0, 255.0)) for c, j in zip(entry.nucleus_color, jitter)]
            seed = int(rng.integers(0, 2**31 - 1))
            out.append({
                "id": f"n{len(out):04d}",
                "class_label": entry.class_label,
                "seed": seed,
                "spec": {
                    "nucleus_radius": radius, "peak_phase": peak, "texture_amplitude": texture,
                    "texture_correlation_length": entry.texture_correlation_length,
                    "nucleus_color": color, "background_color": list(entry.background_color),
                    "inner_transmittance": entry.inner_transmittance,
                },
            })
    return out


def _nucleus_dir(nid: str) -> str:
    return f"nuclei/{nid}"


def cmd_simulate(cfg: PipelineConfig, out=None) -> Run:
    run = Run(out or cfg.output_dir, cfg)
    try:
        run.root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InvalidInputError(f"cannot create output directory {run.root}: {exc}") from exc
    run.start(fresh=True)
    sim = cfg.simulation
    optical = cfg.optical
    pitch = optical.grid.pixel_pitch

    cal = run.path("calibration.qpif")
    qio.write_field(cal, calibration_hologram(optical, sim.calibration_noise_sigma, cfg.seed),
                    pitch, "intensity")

    entries = sample_population(cfg)

    def one(entry):
        s = entry["spec"]
        spec = PhantomSpec(class_label=entry["class_label"], nucleus_radius=s["nucleus_radius"],
                           peak_phase=s["peak_phase"], texture_amplitude=s["texture_amplitude"],
                           texture_correlation_length=s["texture_correlation_length"],
                           nucleus_color=tuple(s["nucleus_color"]),
                           background_color=tuple(s["background_color"]),
                           inner_transmittance=s["inner_transmittance"])
        truth = make_phantom(spec, entry["seed"], optical, brightfield_noise=sim.brightfield_noise_sigma)
        holo = simulate_hologram(truth, optical, sim.hologram_noise_sigma, entry["seed"] + 1)
        d = run.path(_nucleus_dir(entry["id"]))
        files = [
            qio.write_rgb_png(d / "brightfield.png", truth.brightfield),
            qio.write_field(d / "hologram.qpif", holo, pitch, "intensity"),
            qio.write_field(d / "phase_truth.qpif", truth.phase_truth, pitch, "rad"),
            qio.write_field(d / "mask_truth.qpif", truth.mask, pitch, "binary"),
        ]
        return files, [float(c) for c in truth.nucleus_center]

    results = _map(one, entries, cfg.threads)
    outputs = [cal]
    for entry, (files, center) in zip(entries, results):
        entry["center"] = center
        entry["status"] = "ok"
        entry["reason"] = None
        entry["stages"] = {"simulate": "ok"}
        outputs.extend(files)
    run.manifest["nuclei"] = entries
    run.record_stage("simulate", [], outputs, nuclei=len(entries))
    return run


# --------------------------------------------------------------------------- reconstruct


def phase_path(method: str, nid: str) -> str:
    return f"recon/{method}/{nid}_phase.qpif"


def trace_path(nid: str) -> str:
    return f"recon/opt/{nid}_trace.csv"


def trace_violations(totals: Sequence[float]) -> int:
    t = np.asarray(totals, dtype=np.float64)
    return int(np.sum(np.diff(t) > 0))


def cmd_reconstruct(run: Run, method: str = "opt") -> Run:
    if method not in METHODS:
        raise InvalidInputError(f"unknown method {method!r}; expected one of {METHODS}")
    cal = run.path("calibration.qpif")
    if not cal.exists():
        raise CalibrationError(f"calibration hologram {cal} is missing")
    run.start()
    ref = calibrate_reference(qio.read_field(cal))
    cfg = run.cfg
    pitch = cfg.optical.grid.pixel_pitch
    todo = run.alive()

    def one(idx):
        nid = run.nuclei[idx]["id"]
        H = qio.read_field(run.path(_nucleus_dir(nid)) / "hologram.qpif")
        files = []
        violations = 0
        if method == "opt":
            O, trace = optimize_reconstruct(H, ref, cfg.recon)
            rows = [(r.iteration, r.c1, r.c2, r.total, r.delta, r.step_c1, r.step_c2) for r in trace]
            files.append(qio.write_csv(run.path(trace_path(nid)), TRACE_HEADER, rows))
            violations = trace_violations([r.total for r in trace])
        else:
            O = fourier_reconstruct(H, ref, cfg.recon.fourier_filter_radius, window=cfg.recon.fourier_window)
        phi = unwrap_phase(wrapped_phase(O)).values
        files.insert(0, qio.write_field(run.path(phase_path(method, nid)), phi, pitch, "rad"))
        return files, violations

    results = _map(_guard(one), todo, cfg.threads)
    outputs, inputs, violations = [], [cal], 0
    for idx, (res, err) in zip(todo, results):
        inputs.append(run.path(_nucleus_dir(run.nuclei[idx]["id"])) / "hologram.qpif")
        run.mark_nucleus(idx, f"reconstruct-{method}", err)
        if err is None:
            outputs.extend(res[0])
            violations += res[1]
        else:
            log.warning("nucleus %s dropped in reconstruct: %s", run.nuclei[idx]["id"], err)
    run.record_stage(f"reconstruct-{method}", inputs, outputs,
                     reference={"fx": ref.fx, "fy": ref.fy, "amplitude": ref.amplitude},
                     trace_violations=violations)
    run.check_drops(f"reconstruct-{method}")
    return run


# --------------------------------------------------------------------------- segment


def mask_path(nid: str, ext: str = "qpif") -> str:
    return f"masks/{nid}_mask.{ext}"


def read_roi_file(path) -> dict[str, RoiSpec]:
    """Batch ROI centres: CSV with columns ``image_id,cx,cy`` (column, row) and optional ``size``."""
    rois = {}
    for row in qio.read_csv(path):
        try:
            rois[row["image_id"]] = RoiSpec(row["image_id"], (int(row["cy"]), int(row["cx"])),
                                            int(row.get("size") or 256))
        except (KeyError, ValueError) as exc:
            raise InvalidInputError(f"{path}: bad ROI row {row}: {exc}") from exc
    return rois


def cmd_segment(run: Run, rois: Optional[dict[str, RoiSpec]] = None) -> Run:
    run.start()
    cfg = run.cfg
    seg = cfg.segmentation
    pitch = cfg.optical.grid.pixel_pitch
    todo = run.alive()

    def one(idx):
        nid = run.nuclei[idx]["id"]
        rgb = qio.read_rgb_png(run.path(_nucleus_dir(nid)) / "brightfield.png")
        roi = (rois or {}).get(nid)
        M = segment_nucleus(rgb, roi, seg.window, seg.init_percentiles, seg.luma_weights)
        if M.shape != rgb.shape[:2]:
            # masks stay in image coordinates so they line up with the phase maps
            full = np.zeros(rgb.shape[:2], dtype=M.dtype)
            full[roi.bounds(rgb.shape)] = M
            M = full
        return [qio.write_mask_png(run.path(mask_path(nid, "png")), M),
                qio.write_field(run.path(mask_path(nid)), M, pitch, "binary")]

    results = _map(_guard(one), todo, cfg.threads)
    inputs, outputs = [], []
    for idx, (res, err) in zip(todo, results):
        inputs.append(run.path(_nucleus_dir(run.nuclei[idx]["id"])) / "brightfield.png")
        run.mark_nucleus(idx, "segment", err)
        if err is None:
            outputs.extend(res)
        else:
            log.warning("nucleus %s dropped in segment: %s", run.nuclei[idx]["id"], err)
    run.record_stage("segment", inputs, outputs)
    run.check_drops("segment")
    return run


# --------------------------------------------------------------------------- features


def features_path(method: str) -> str:
    return f"features/features_{method}.csv"


def cmd_features(run: Run, method: str = "opt") -> Run:
    if method not in METHODS:
        raise InvalidInputError(f"unknown method {method!r}; expected one of {METHODS}")
    run.start()
    todo = run.alive()

    def one(idx):
        nid = run.nuclei[idx]["id"]
        srcs = [run.path(_nucleus_dir(nid)) / "brightfield.png", run.path(phase_path(method, nid)),
                run.path(mask_path(nid))]
        for s in srcs:
            if not s.exists():
                raise InvalidInputError(f"missing input {run.rel(s)}")
        rgb = qio.read_rgb_png(srcs[0])
        phi = qio.read_field(srcs[1])
        M = qio.read_field(srcs[2]) > 0.5
        return srcs, extract_all(rgb, phi, M, nid)

    results = _map(_guard(one), todo, run.cfg.threads)
    rows, inputs = [], []
    for idx, (res, err) in zip(todo, results):
        run.mark_nucleus(idx, f"features-{method}", err)
        if err is None:
            inputs.extend(res[0])
            f = res[1]
            rows.append([f.nucleus_id, run.nuclei[idx]["class_label"], *f.values()])
        else:
            log.warning("nucleus %s dropped in features: %s", run.nuclei[idx]["id"], err)
    run.check_drops(f"features-{method}")
    out = qio.write_csv(run.path(features_path(method)), ("nucleus_id", "class_label", *FEATURE_NAMES), rows)
    run.record_stage(f"features-{method}", inputs, [out], rows=len(rows))
    return run


# --------------------------------------------------------------------------- analyze


def analysis_dir(method: str, columns: str) -> str:
    return f"analysis/{method}/{columns}"


def _num(v) -> float:
    """Round to 12 significant digits so reports do not expose last-bit noise."""
    return float(f"{float(v):.12g}")


def analyze_table(ids, labels, D: np.ndarray, names: Sequence[str], cfg: PipelineConfig):
    """PCA, KMO, stability and silhouette for one feature table.

    Returns ``(report, scores)``; ``scores`` holds the first
    ``cfg.analysis.components`` principal-component scores per row.
    """
    acfg = cfg.analysis
    model = pca(D, names)
    k = min(acfg.components, len(names))
    scores = project(model.standardize(D), model, k)
    report = {
        "columns": list(names),
        "n_rows": int(D.shape[0]),
        "n_columns": int(D.shape[1]),
        "eigenvalues": [_num(v) for v in model.eigenvalues],
        "explained_fraction": [_num(v) for v in model.explained_fraction],
        "explained_variance_k": _num(explained_variance(model, k)),
        "components": k,
        "eigenvectors": {name: [_num(v) for v in row] for name, row in zip(names, model.eigenvectors)},
        "class_counts": {c: int(np.sum(np.asarray(labels) == c)) for c in sorted(set(labels))},
    }
    try:
        res = kmo(D)
        report["kmo"] = {"overall": _num(res.overall),
                         "per_variable": {n: _num(v) for n, v in zip(names, res.per_variable)},
                         "formula": KMO_FORMULA}
    except SingularMatrixError as exc:
        kept, dropped = _well_conditioned_columns(D, names)
        report["kmo"] = {"error": str(exc), "formula": KMO_FORMULA}
        if len(kept) >= 2:
            res = kmo(D[:, [names.index(n) for n in kept]])
            report["kmo"]["reduced"] = {
                "dropped_columns": dropped, "overall": _num(res.overall),
                "per_variable": {n: _num(v) for n, v in zip(kept, res.per_variable)}}

    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(D.shape[0])
    start = D.shape[1] + 1
    if D.shape[0] > start:
        try:
            tr = stability_curve(D[order], start)
            report["stability"] = {"start_n": start, "threshold": acfg.stability_threshold,
                                   "settled_after": tr.settled_after(acfg.stability_threshold),
                                   "s": [_num(v) for v in tr.s_values]}
        except DegenerateColumnError as exc:
            report["stability"] = {"error": f"a prefix of the shuffled rows has a constant column: {exc}"}
    else:
        report["stability"] = {"error": f"needs more than {start} rows"}

    if len(set(labels)) >= 2:
        report["silhouette"] = _num(silhouette(scores, labels))
    else:
        report["silhouette"] = None
    return report, scores


def _well_conditioned_columns(D: np.ndarray, names: Sequence[str], max_condition: float = 1e12):
    """Greedily drop the column whose removal lowers the correlation-matrix
    condition number most, until it falls below ``max_condition``."""
    names = list(names)
    Z = (D - D.mean(axis=0)) / D.std(axis=0)
    kept, dropped = list(range(len(names))), []
    while len(kept) > 2:
        C = np.corrcoef(Z[:, kept], rowvar=False)
        if np.linalg.cond(C) < max_condition:
            break
        conds = [np.linalg.cond(np.delete(np.delete(C, j, 0), j, 1)) for j in range(len(kept))]
        j = int(np.argmin(conds))
        dropped.append(names[kept.pop(j)])
    return [names[k] for k in kept], dropped


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


def scatter_svg(scores: np.ndarray, labels: Sequence[str], title: str = "") -> str:
    """PC1/PC2 scatter, one circle per row, colored by label. No timestamps."""
    size, pad = 480, 48
    x = scores[:, 0] if scores.shape[1] else np.zeros(scores.shape[0])
    y = scores[:, 1] if scores.shape[1] > 1 else np.zeros_like(x)

    def axis(v):
        lo, hi = (float(v.min()), float(v.max())) if v.size else (0.0, 0.0)
        if hi - lo < 1e-12:
            lo, hi = lo - 1.0, hi + 1.0
        return lambda t: pad + (t - lo) / (hi - lo) * (size - 2 * pad)

    sx, sy = axis(x), axis(y)
    classes = sorted(set(labels))
    color = {c: _PALETTE[i % len(_PALETTE)] for i, c in enumerate(classes)}
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
        f'<line x1="{pad}" y1="{size - pad}" x2="{size - pad}" y2="{size - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{size - pad}" stroke="black"/>',
        f'<text x="{size / 2:.1f}" y="{size - 12}" text-anchor="middle" font-size="14">PC1</text>',
        f'<text x="14" y="{size / 2:.1f}" text-anchor="middle" font-size="14" '
        f'transform="rotate(-90 14 {size / 2:.1f})">PC2</text>',
    ]
    if title:
        parts.append(f'<text x="{size / 2:.1f}" y="24" text-anchor="middle" font-size="14">{title}</text>')
    for xi, yi, lab in zip(x, y, labels):
        parts.append(f'<circle class="marker" cx="{sx(xi):.2f}" cy="{size - sy(yi):.2f}" r="3" '
                     f'fill="{color[lab]}" fill-opacity="0.8"><title>{lab}</title></circle>')
    for i, c in enumerate(classes):
        ty = pad + 16 * i
        parts.append(f'<circle cx="{size - pad - 110}" cy="{ty - 4}" r="4" fill="{color[c]}"/>')
        parts.append(f'<text x="{size - pad - 100}" y="{ty}" font-size="12">{c}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def read_feature_table(path):
    rows = qio.read_csv(path)
    ids = [r["nucleus_id"] for r in rows]
    labels = [r["class_label"] for r in rows]
    return ids, labels, rows


def cmd_analyze(run: Run, columns: str = "all", method: str = "opt") -> Run:
    if columns not in COLUMN_SETS:
        raise InvalidInputError(f"unknown column set {columns!r}; expected one of {sorted(COLUMN_SETS)}")
    src = run.path(features_path(method))
    if not src.exists():
        raise InvalidInputError(f"feature table {run.rel(src)} is missing; run features first")
    run.start()
    names = COLUMN_SETS[columns]
    ids, labels, rows = read_feature_table(src)
    D = np.array([[float(r[n]) for n in names] for r in rows], dtype=np.float64).reshape(len(rows), len(names))
    stage = f"analyze-{method}-{columns}"
    status = "ok"
    if D.shape[0] < 2:
        # nothing to decompose; still emit a report saying so
        log.warning("%s: %d row(s), analysis skipped", stage, D.shape[0])
        status = "insufficient-rows"
        report = {"columns": list(names), "n_rows": int(D.shape[0]), "n_columns": len(names),
                  "error": "analysis needs at least two nuclei"}
        scores = np.zeros((D.shape[0], min(run.cfg.analysis.components, len(names))))
    else:
        try:
            report, scores = analyze_table(ids, labels, D, names, run.cfg)
        except QpiError as exc:
            raise StageError(stage, str(exc)) from exc
    report.update({"method": method, "column_set": columns, "config_hash": run.cfg.hash()})
    d = run.path(analysis_dir(method, columns))
    pcs = [f"PC{i + 1}" for i in range(scores.shape[1])]
    outs = [
        qio.write_json(d / "report.json", report),
        qio.write_csv(d / "scores.csv", ("nucleus_id", *pcs, "class_label"),
                      [[i, *s, lab] for i, lab, s in zip(ids, labels, scores)]),
    ]
    svg = d / "scatter.svg"
    svg.write_text(scatter_svg(scores, labels, f"{columns} features ({method})"), encoding="utf-8")
    outs.append(svg)
    run.record_stage(stage, [src], outs)
    run.manifest["stages"][stage]["status"] = status
    run.save()
    return run


# --------------------------------------------------------------------------- pipeline


def cmd_pipeline(cfg: PipelineConfig, out=None) -> Run:
    """simulate, reconstruct (opt), segment, features, analyze for both column sets."""
    run = None
    stage = "simulate"
    try:
        run = cmd_simulate(cfg, out)
        for stage, fn in (("reconstruct-opt", lambda: cmd_reconstruct(run, "opt")),
                          ("segment", lambda: cmd_segment(run)),
                          ("features-opt", lambda: cmd_features(run, "opt")),
                          ("analyze-opt-all", lambda: cmd_analyze(run, "all", "opt")),
                          ("analyze-opt-brightfield", lambda: cmd_analyze(run, "brightfield", "opt"))):
            fn()
    except StageError:
        raise
    except QpiError as exc:
        if run is not None:
            run.save()
        if isinstance(exc, (InvalidInputError, CalibrationError)):
            raise type(exc)(f"stage {stage!r}: {exc}") from exc
        raise StageError(stage, str(exc)) from exc
    run.finish()
    return run
