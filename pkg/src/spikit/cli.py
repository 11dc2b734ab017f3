"""Command-line entry point: ingest, train, reconstruct, benchmark, patterns.

Every run resolves its parameters as preset < config file < flags and writes
the result to ``OUT/resolved_config.txt``, which ``--config`` accepts back.
Exit codes: 0 ok, 2 bad configuration, 3 training failure, 4 missing artifact.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

log = logging.getLogger("spikit")

EXIT_OK, EXIT_CONFIG, EXIT_TRAIN, EXIT_MISSING = 0, 2, 3, 4
BENCH_ALPHAS = (0.0625, 0.25, 0.5, 1.0)
BENCH_ETAS = (0.0, 1e-5, 1e-4, 5e-4)


class ConfigError(ValueError):
    pass


class MissingArtifact(FileNotFoundError):
    pass


@dataclass
class RunConfig:
    command: str = ""
    out: str = "runs/out"
    preset: str = "desk"
    seed: int = 0
    deterministic: bool = False
    # data
    source: str = "photos"  # "photos", "phantoms" or a folder of PNG/PGM files
    data: str = ""  # directory holding train.bin / test.bin from `ingest`
    side: int = 32
    train_count: int = 2000
    test_count: int = 200
    # training
    variants: tuple = ("B", "BO", "NB", "NBO")
    alphas: tuple = (0.0625,)
    epochs_phase1: int = 15
    epochs_phase2: int = 15
    batch_size: int = 32
    learning_rate: float = 1e-3
    phase2_learning_rate: float = 1e-2
    binary_weight: float = 1.0
    ortho_weight: float = 10.0
    train_eta: float = 1e-4
    checkpoints: str = ""
    # evaluation
    methods: tuple = ("tv-b", "tv-nb", "ft", "dl-b", "dl-bo", "dl-nb", "dl-nbo")
    etas: tuple = BENCH_ETAS
    eval_count: int = 20
    timing_repeats: int = 5
    image: str = ""
    reference: str = ""

    def validate(self) -> "RunConfig":
        from spikit.dcan import Variant
        from spikit.methods import METHODS

        if self.side < 2:
            raise ConfigError("side must be >= 2")
        if any(a <= 0 for a in self.alphas):
            raise ConfigError("alpha must be positive")
        if any(e < 0 for e in self.etas) or self.train_eta < 0:
            raise ConfigError("eta must be non-negative")
        for v in self.variants:
            if v not in Variant.__members__:
                raise ConfigError(f"unknown variant {v!r}; choose from B, BO, NB, NBO")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}")
        if min(self.train_count, self.test_count, self.eval_count, self.batch_size) < 1:
            raise ConfigError("counts and batch size must be >= 1")
        if min(self.learning_rate, self.phase2_learning_rate) <= 0:
            raise ConfigError("learning rates must be positive")
        if self.timing_repeats < 5:
            raise ConfigError("timing_repeats must be >= 5")
        return self

    def to_text(self) -> str:
        return "".join(f"{f.name} = {_format(getattr(self, f.name))}\n" for f in fields(self))

    @property
    def checkpoint_dir(self) -> Path:
        return Path(self.checkpoints or Path(self.out) / "checkpoints")


COMMAND_DEFAULTS = {"reconstruct": {"etas": (0.0,)}, "benchmark": {"alphas": BENCH_ALPHAS}}

PRESETS = {
    "desk": {},
    "paper": {"side": 64, "train_count": 90000, "test_count": 10000, "epochs_phase1": 50, "epochs_phase2": 50,
              "phase2_learning_rate": 1e-3},
}


def _format(value) -> str:
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(name: str, text: str):
    field = {f.name: f for f in fields(RunConfig)}.get(name)
    if field is None:
        raise ConfigError(f"unknown config key {name!r}")
    default = field.default
    text = text.strip()
    try:
        if isinstance(default, bool):
            if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return text.lower() in ("true", "1", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            items = [t.strip() for t in text.split(",") if t.strip()]
            if name in ("alphas", "etas"):
                return tuple(float(t) for t in items)
            if name == "variants":
                return tuple(t.upper() for t in items)
            return tuple(t.lower() for t in items)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {text!r}") from exc
    return text


def read_config_file(path) -> dict:
    values = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key = value")
        key, text = (s.strip() for s in line.split("=", 1))
        values[key] = _parse(key, text)
    return values


FLAG_KEYS = {"alpha": "alphas", "eta": "etas", "method": "methods", "variant": "variants"}


def resolve(args: argparse.Namespace) -> RunConfig:
    values: dict = {"command": args.command}
    file_values = read_config_file(args.config) if args.config else {}
    preset = args.preset or file_values.get("preset", "desk")
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}")
    values.update(COMMAND_DEFAULTS.get(args.command, {}))
    values.update(PRESETS[preset])
    values.update(file_values)
    values["preset"] = preset
    values["command"] = args.command
    for flag in ("out", "seed", "source", "data", "checkpoints", "image", "reference", "side"):
        v = getattr(args, flag, None)
        if v is not None:
            values[flag] = v
    for flag, key in FLAG_KEYS.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[key] = _parse(key, v)
    if args.deterministic:
        values["deterministic"] = True
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, text = item.split("=", 1)
        values[key.strip()] = _parse(key.strip(), text)
    return RunConfig(**values).validate()


def write_resolved(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.txt").write_text(cfg.to_text())
    return out


# --- data -------------------------------------------------------------------------


def load_data(cfg: RunConfig) -> tuple[np.ndarray, np.ndarray]:
    """Train/test stacks from ``cfg.data`` archives, else generated from ``cfg.source``."""
    from spikit.dataset import load_archive

    if cfg.data:
        d = Path(cfg.data)
        if not (d / "train.bin").exists() or not (d / "test.bin").exists():
            raise MissingArtifact(f"{d} has no train.bin/test.bin; run `spikit ingest` first")
        train, test = load_archive(d / "train.bin"), load_archive(d / "test.bin")
        if train.shape[1] != cfg.side:
            raise ConfigError(f"archives in {d} are {train.shape[1]}x{train.shape[1]}, config side is {cfg.side}")
        return train, test
    return make_data(cfg)[:2]


def make_data(cfg: RunConfig):
    from spikit.dataset import ingest, photo_crops, synth_phantoms

    if cfg.source == "photos":
        return (photo_crops(cfg.train_count, cfg.side, cfg.seed, "train"),
                photo_crops(cfg.test_count, cfg.side, cfg.seed, "test"), None)
    if cfg.source == "phantoms":
        imgs = synth_phantoms(cfg.train_count + cfg.test_count, cfg.side, cfg.seed)
        return imgs[: cfg.train_count], imgs[cfg.train_count :], None
    if not Path(cfg.source).is_dir():
        raise MissingArtifact(f"image folder {cfg.source} not found")
    return ingest(cfg.source, cfg.side, cfg.seed)


def cmd_ingest(cfg: RunConfig) -> int:
    from spikit.dataset import save_archive

    out = write_resolved(cfg)
    train, test, manifest = make_data(cfg)
    save_archive(out / "train.bin", train)
    save_archive(out / "test.bin", test)
    if manifest is not None:
        manifest.write(out / "manifest.txt")
    log.info("wrote %d train / %d test images to %s", len(train), len(test), out)
    return EXIT_OK


# --- training ---------------------------------------------------------------------


def dcan_config(cfg: RunConfig, alpha: float, variant: str):
    from spikit.dcan import DcanConfig
    from spikit.methods import pattern_count

    return DcanConfig(side=cfg.side, pattern_count=pattern_count(alpha, cfg.side), variant=variant,
                      binary_weight=cfg.binary_weight, ortho_weight=cfg.ortho_weight, train_eta=cfg.train_eta,
                      epochs_phase1=cfg.epochs_phase1, epochs_phase2=cfg.epochs_phase2, batch_size=cfg.batch_size,
                      learning_rate=cfg.learning_rate, phase2_learning_rate=cfg.phase2_learning_rate,
                      decoder_seed=cfg.seed, encoder_seed=cfg.seed + 1,
                      shuffle_seed=cfg.seed + 2, noise_seed=cfg.seed + 3, deterministic=cfg.deterministic)


def cmd_train(cfg: RunConfig) -> int:
    from spikit import dcan
    from spikit.methods import checkpoint_name

    out = write_resolved(cfg)
    train, _ = load_data(cfg)
    ckdir = cfg.checkpoint_dir
    ckdir.mkdir(parents=True, exist_ok=True)
    for alpha in cfg.alphas:
        base = dcan_config(cfg, alpha, cfg.variants[0])
        model = dcan.build(base)
        history = dcan.train_phase1(model, train, base)
        for variant in cfg.variants:
            vcfg = dcan.with_variant(base, variant)
            trained = dcan.train_phase2(dcan.copy_model(model), train, vcfg, list(history))
            name = checkpoint_name(variant, alpha)
            trained.save(ckdir / name)
            dcan.write_history(out / name.replace(".ckpt", "_history.csv"), trained.history)
            log.info("alpha %g variant %s: final mse %.5f", alpha, variant, trained.history[-1].mse)
    return EXIT_OK


# --- reconstruction ------------------------------------------------------------------


def _noise_seed(seed: int, image_index: int, eta_index: int) -> int:
    return int(np.random.SeedSequence([seed, image_index, eta_index]).generate_state(1)[0])


def cmd_reconstruct(cfg: RunConfig) -> int:
    from spikit.imaging import load_image, save_image
    from spikit.metrics import EvalReport, ssim, write_reports
    from spikit.methods import make_method

    if len(cfg.methods) != 1 or len(cfg.alphas) != 1 or len(cfg.etas) != 1:
        raise ConfigError("reconstruct takes exactly one --method, --alpha and --eta")
    method, alpha, eta = cfg.methods[0], cfg.alphas[0], cfg.etas[0]
    if cfg.image:
        if not Path(cfg.image).exists():
            raise MissingArtifact(f"image {cfg.image} not found")
        from spikit.dataset import resize_bilinear

        image = np.clip(resize_bilinear(load_image(cfg.image), cfg.side), 0, 1)
    else:
        image = load_data(cfg)[1][0]
    reference = image
    if cfg.reference:
        if not Path(cfg.reference).exists():
            raise MissingArtifact(f"reference {cfg.reference} not found")
        reference = load_image(cfg.reference)
    m = make_method(method, alpha, cfg.side, seed=cfg.seed, checkpoint_dir=cfg.checkpoint_dir)
    out = write_resolved(cfg)
    rec = m.reconstruct(m.measure(image, eta, _noise_seed(cfg.seed, 0, 0)))
    save_image(out / f"{method}_a{alpha:g}_eta{eta:g}.png", rec)
    score = ssim(rec, reference) if reference.shape == rec.shape else float("nan")
    write_reports(out / "report.csv", [EvalReport(method, alpha, eta, [] if np.isnan(score) else [score])])
    print(f"{method} alpha={alpha:g} eta={eta:g} ssim={score:.4f}")
    return EXIT_OK


# --- benchmark -----------------------------------------------------------------------


def run_benchmark(cfg: RunConfig, out: Path) -> int:
    """Sweep methods x alphas x etas over the first ``eval_count`` test images.

    Writes ``table.csv`` (one row per cell), ``per_image.csv``, ``omega.csv``,
    ``timing.csv`` and figures. In deterministic mode no wall-clock values are
    recorded, so every CSV is reproducible byte for byte. Returns the number
    of cells that failed.
    """
    from spikit.metrics import EvalReport, TimingError, ssim, time_reconstruction, write_reports
    from spikit.methods import make_method

    _, test = load_data(cfg)
    images = test[: cfg.eval_count]
    reports, per_image, omegas, timings, failures = [], [], [], [], []
    for method in cfg.methods:
        for alpha in cfg.alphas:
            try:
                m = make_method(method, alpha, cfg.side, seed=cfg.seed, checkpoint_dir=cfg.checkpoint_dir)
                omega = m.omega()
            except (FileNotFoundError, ValueError) as exc:
                failures.extend((method, alpha, eta, str(exc)) for eta in cfg.etas)
                continue
            omegas.append((method, alpha, omega))
            for k, eta in enumerate(cfg.etas):
                scores = []
                for i, x in enumerate(images):
                    rec = m.reconstruct(m.measure(x, eta, _noise_seed(cfg.seed, i, k)))
                    scores.append(ssim(rec, x))
                    per_image.append((method, alpha, eta, i, scores[-1]))
                reports.append(EvalReport(method, alpha, eta, scores, omega=omega))
            if not cfg.deterministic:
                ys = [m.measure(x, 0.0) for x in images[: min(5, len(images))]]
                try:
                    t = time_reconstruction(m.reconstruct, ys, repeats=cfg.timing_repeats)
                except TimingError as exc:
                    failures.append((method, alpha, "timing", str(exc)))
                    continue
                timings.append((method, alpha, t))
                for rep in reports[-len(cfg.etas):]:
                    rep.t_median_ms, rep.t_iqr_ms, rep.environment = t.median_ms, t.iqr_ms, t.environment
    write_reports(out / "table.csv", reports)
    _write_rows(out / "per_image.csv", ["method", "alpha", "eta", "image", "ssim"],
                [(m, f"{a:g}", f"{e:g}", i, f"{s:.9f}") for m, a, e, i, s in per_image])
    _write_rows(out / "omega.csv", ["method", "alpha", "omega"], [(m, f"{a:g}", f"{o:.9g}") for m, a, o in omegas])
    _write_rows(out / "timing.csv", ["method", "alpha", "t_median_ms", "t_iqr_ms", "reliable"],
                [(m, f"{a:g}", f"{t.median_ms:.6g}", f"{t.iqr_ms:.6g}", int(t.reliable)) for m, a, t in timings])
    _write_rows(out / "failures.csv", ["method", "alpha", "eta", "error"], [(m, f"{a:g}", e, msg) for m, a, e, msg in failures])
    if timings:
        (out / "environment.txt").write_text(timings[0][2].environment + "\n")
    plot_benchmark(out, reports, omegas, timings)
    return len(failures)


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def plot_benchmark(out: Path, reports, omegas, timings) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    def series(key_fn, select):
        groups: dict = {}
        for item in select:
            name, x, y = key_fn(item)
            groups.setdefault(name, []).append((x, y))
        return {k: sorted(v) for k, v in groups.items()}

    alpha0 = min((r.alpha for r in reports), default=None)
    figures = [
        ("ssim_vs_alpha.png", "sampling ratio", "mean SSIM", True,
         series(lambda r: (r.method, r.alpha, r.ssim_mean), [r for r in reports if r.eta == 0])),
        ("ssim_vs_eta.png", "noise level eta", "mean SSIM", False,
         series(lambda r: (r.method, r.eta, r.ssim_mean), [r for r in reports if r.alpha == alpha0])),
        ("omega_vs_alpha.png", "sampling ratio", "orthogonality score", True,
         series(lambda o: (o[0], o[1], max(o[2], 1e-20)), omegas)),
        ("timing_vs_alpha.png", "sampling ratio", "median time per frame (ms)", True,
         series(lambda t: (t[0], t[1], t[2].median_ms), timings)),
    ]
    for name, xlabel, ylabel, logx, data in figures:
        if not data:
            continue
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for label, pts in data.items():
            xs, ys = zip(*pts)
            ax.plot(xs, ys, marker="o", label=label)
        if logx:
            ax.set_xscale("log")
        if name.startswith(("omega", "timing")):
            ax.set_yscale("log")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(out / name, dpi=100, metadata={"Software": None})
        plt.close(fig)


def cmd_benchmark(cfg: RunConfig) -> int:
    out = write_resolved(cfg)
    failed = run_benchmark(cfg, out)
    total = len(cfg.methods) * len(cfg.alphas) * len(cfg.etas)
    if failed:
        log.warning("%d of %d cells failed; see failures.csv", failed, total)
    return EXIT_MISSING if failed >= total else EXIT_OK


# --- patterns ------------------------------------------------------------------------


def cmd_patterns(cfg: RunConfig) -> int:
    from spikit.methods import make_method
    from spikit.patterns import export_pattern_png, save_basis

    out = write_resolved(cfg)
    rows = []
    for method in cfg.methods:
        for alpha in cfg.alphas:
            m = make_method(method, alpha, cfg.side, seed=cfg.seed, checkpoint_dir=cfg.checkpoint_dir)
            stem = f"{method}_a{alpha:g}"
            save_basis(out / f"{stem}.spib", m.basis)
            for j in range(min(8, m.basis.pattern_count)):
                export_pattern_png(out / f"{stem}_p{j}.png", m.basis, j)
            rows.append((method, f"{alpha:g}", m.basis.pattern_count, f"{m.omega():.9g}"))
            print(f"{stem}: {m.basis.pattern_count} patterns, omega {rows[-1][-1]}")
    _write_rows(out / "patterns.csv", ["method", "alpha", "patterns", "omega"], rows)
    return EXIT_OK


COMMANDS = {"ingest": cmd_ingest, "train": cmd_train, "reconstruct": cmd_reconstruct,
            "benchmark": cmd_benchmark, "patterns": cmd_patterns}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spikit", description="Single-pixel imaging simulation and reconstruction.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value file; flags override it")
        p.add_argument("--preset", choices=sorted(PRESETS))
        p.add_argument("--out")
        p.add_argument("--seed", type=int)
        p.add_argument("--side", type=int)
        p.add_argument("--deterministic", action="store_true")
        p.add_argument("--source", help="'photos', 'phantoms' or an image folder")
        p.add_argument("--data", help="directory with train.bin/test.bin")
        p.add_argument("--checkpoints")
        p.add_argument("--alpha", help="sampling ratio(s), comma separated")
        p.add_argument("--eta", help="noise level(s), comma separated")
        p.add_argument("--method", help="method(s): tv-b, tv-nb, ft, dl-b, dl-bo, dl-nb, dl-nbo")
        p.add_argument("--variant", help="DCAN variant(s): B, BO, NB, NBO")
        p.add_argument("--image")
        p.add_argument("--reference")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    from spikit.dcan import TrainingDiverged
    from spikit.methods import MissingCheckpoint

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve(args)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if cfg.deterministic:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=1):
                return COMMANDS[cfg.command](cfg)
        return COMMANDS[cfg.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingArtifact, MissingCheckpoint) as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except TrainingDiverged as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_TRAIN


if __name__ == "__main__":
    sys.exit(main())
