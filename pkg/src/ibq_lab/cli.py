"""
Command-line front end of the lab with Rich formatting.

Every subcommand is one LabCLI method. Methods return the process exit code;
library errors are left to the caller, which turns them into exit codes.
"""

from __future__ import annotations

import copy
import logging
import math
from contextlib import contextmanager
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence

import numpy as np
from rich import box
from rich.console import Console
from rich.panel import Panel
from rich.progress import BarColumn, MofNCompleteColumn, Progress, TextColumn, TimeElapsedColumn
from rich.table import Table
from rich.text import Text

from .ar import PRESET_DEPTHS, ar_param_count, ar_scale_config, load_ar, sample_images, train_ar
from .checkpoint import Checkpoint
from .config import RunConfig, override, validate_config
from .core.errors import ConfigError
from .data.archive import archive_save
from .data.csvlog import COMPARE_COLUMNS, MetricsCSV
from .data.ppm import write_ppm
from .diagnostics import run_quantcheck
from .metrics import export_embeddings_csv
from .quantizers import QuantizerKind
from .tokenizer import (SoftVQMode, checkpoint_tau, codebook_matrix, evaluate_tokenizer, load_dataset,
                        load_tokenizer, tokenize_dataset, tokenizer_param_count, train_tokenizer)
from .tokenizer.train import LAST_CHECKPOINT, MID_CHECKPOINT

log = logging.getLogger(__name__)

COMPARE_DIR = "compare"
COMPARE_FILE = "compare.csv"
TOKENS_FILE = "tokens.ibqk"
EVAL_DIR = "eval"


def parse_quantizers(text: str) -> List[QuantizerKind]:
    """'ibq,vqgan' -> [IBQ, VQGAN]."""
    kinds = []
    for name in filter(None, (part.strip().lower() for part in text.split(","))):
        try:
            kinds.append(QuantizerKind(name))
        except ValueError:
            choices = ", ".join(k.value for k in QuantizerKind)
            raise ConfigError(f"unknown quantizer {name!r}; choose from {choices}") from None
    if not kinds:
        raise ConfigError("no quantizers listed")
    return kinds


def config_for(cfg: RunConfig, kind: QuantizerKind) -> RunConfig:
    """Copy of cfg using another quantizer; LFQ gets D = log2 K."""
    variant = copy.deepcopy(cfg)
    variant.tokenizer.quantizer = kind
    if kind is QuantizerKind.LFQ:
        size = variant.tokenizer.codebook_size
        variant.tokenizer.code_dim = int(math.log2(size))
    return validate_config(variant)


class LabCLI:
    """Command-line interface for the quantization lab with Rich formatting."""

    def __init__(self, console: Optional[Console] = None):
        self.console = console or Console()

    # *** helpers ***
    @contextmanager
    def _progress(self, description: str) -> Iterator:
        """Yields a (step, total) hook driving a progress bar, or None off-terminal."""
        if not self.console.is_terminal:
            yield None
            return
        columns = (TextColumn("[bold cyan]{task.description}"), BarColumn(), MofNCompleteColumn(),
                   TimeElapsedColumn())
        with Progress(*columns, console=self.console, transient=True) as progress:
            task = progress.add_task(description, total=None)

            def hook(step: int, total: int):
                progress.update(task, completed=step, total=total)
            yield hook

    def _metrics_table(self, title: str, rows: Dict[str, object]) -> Table:
        table = Table(title=title, box=box.SIMPLE_HEAVY)
        table.add_column("Metric", style="cyan")
        table.add_column("Value", justify="right", style="yellow")
        for name, value in rows.items():
            table.add_row(name, f"{value:.4f}" if isinstance(value, float) else str(value))
        return table

    def error(self, message: str, title: str = "Error"):
        self.console.print(Panel(Text(message, style="bold"), title=title, style="red", box=box.HEAVY))

    def _checkpoint_config(self, ckpt: Checkpoint, data_cfg: Optional[RunConfig],
                           deterministic: Optional[bool]) -> RunConfig:
        """The checkpoint's config, with another data section and the --deterministic flag applied."""
        cfg = copy.deepcopy(ckpt.config)
        if data_cfg is not None:
            cfg.data = copy.deepcopy(data_cfg.data)
        return override(cfg, deterministic=deterministic)

    # *** commands ***
    def train_tokenizer(self, cfg: RunConfig, dry_run: bool = False, resume: bool = False) -> int:
        """Train one tokenizer, or with dry_run only validate and count parameters."""
        t = cfg.tokenizer
        if dry_run:
            self.console.print(self._metrics_table("Tokenizer (dry run)", {
                "quantizer": t.quantizer.value,
                "codebook": f"K={t.codebook_size} D={t.code_dim}",
                "grid": f"{cfg.data.size // t.downsample}x{cfg.data.size // t.downsample}",
                "parameters": f"{tokenizer_param_count(t):,}",
                "output": str(cfg.output_dir),
            }))
            return 0
        with self._progress(f"{t.quantizer.value} tokenizer") as hook:
            result = train_tokenizer(cfg, resume=resume, progress=hook)
        final = result.final
        self.console.print(self._metrics_table(f"{t.quantizer.value} tokenizer, epoch {final.get('epoch', 0)}", {
            "loss": final.get("loss_total", float("nan")),
            "usage": final.get("usage", float("nan")),
            "perplexity": final.get("perplexity", float("nan")),
            "PSNR (dB)": final.get("psnr_val", float("nan")),
        }))
        self.console.print(Panel(f"checkpoint: {result.checkpoint}\nmetrics: {result.metrics}",
                                 title="Artifacts", style="green"))
        return 0

    def compare_quantizers(self, cfg: RunConfig, kinds: Sequence[QuantizerKind]) -> int:
        """Train each quantizer with the same seed, data and budget; write one combined CSV."""
        variants = [config_for(cfg, kind) for kind in kinds]
        dataset = load_dataset(cfg)
        root = cfg.output_dir / COMPARE_DIR
        combined = MetricsCSV(root / COMPARE_FILE, COMPARE_COLUMNS)
        summary = Table(title="Quantizer comparison", box=box.SIMPLE_HEAVY)
        for column in ("Quantizer", "Usage", "Perplexity", "PSNR (dB)", "Loss"):
            summary.add_column(column, justify="right" if column != "Quantizer" else "left")
        gap_rows = []
        for variant in variants:
            kind = variant.tokenizer.quantizer
            out = root / kind.value
            with self._progress(kind.value) as hook:
                result = train_tokenizer(variant, dataset=dataset, out_dir=out, progress=hook)
            for row in result.rows:
                combined.append({"quantizer": kind.value, "epoch": row["epoch"], "usage": row["usage"],
                                 "psnr": row["psnr_val"], "loss": row["loss_total"]})
            final = result.final
            summary.add_row(kind.value, f"{final['usage']:.3f}", f"{final['perplexity']:.1f}",
                            f"{final['psnr_val']:.2f}", f"{final['loss_total']:.4f}")
            if kind is QuantizerKind.SOFTVQ:
                gap_rows.append(self.softvq_gap(out, variant))
        self.console.print(summary)
        for soft, hard, source in gap_rows:
            self.console.print(Panel(
                f"soft inference PSNR {soft:.2f} dB, hard inference PSNR {hard:.2f} dB, "
                f"drop {soft - hard:.2f} dB\n({source.name})", title="Soft VQ train/inference mismatch",
                style="magenta"))
        self.console.print(f"[green]combined metrics:[/green] {combined.path}")
        return 0

    def softvq_gap(self, out: Path, cfg: RunConfig):
        """(soft PSNR, hard PSNR, checkpoint used) for a Soft VQ run folder, from mid.ibqa when present."""
        source = out / MID_CHECKPOINT
        if not source.exists():
            log.warning("no %s in %s; measuring the soft VQ gap on %s instead", MID_CHECKPOINT, out, LAST_CHECKPOINT)
            source = out / LAST_CHECKPOINT
        model, ckpt = load_tokenizer(source)
        _, val = load_dataset(cfg).split(cfg.data.seed, cfg.data.held_out)
        tau = checkpoint_tau(ckpt)
        prefetch = not cfg.deterministic
        soft = evaluate_tokenizer(model, val, cfg.optim.batch, SoftVQMode.SOFT, tau, prefetch=prefetch).psnr
        hard = evaluate_tokenizer(model, val, cfg.optim.batch, SoftVQMode.HARD, tau, prefetch=prefetch).psnr
        return soft, hard, source

    def eval_tokenizer(self, checkpoint: Path, data_cfg: Optional[RunConfig] = None,
                       out_dir: Optional[Path] = None, softvq_mode: SoftVQMode = SoftVQMode.HARD,
                       keep: int = 16, deterministic: Optional[bool] = None) -> int:
        """Evaluate a checkpoint on the held-out split and export reconstructions, indices and embeddings."""
        model, ckpt = load_tokenizer(checkpoint)
        cfg = self._checkpoint_config(ckpt, data_cfg, deterministic)
        _, val = load_dataset(cfg).split(cfg.data.seed, cfg.data.held_out)
        result = evaluate_tokenizer(model, val, cfg.optim.batch, softvq_mode, checkpoint_tau(ckpt), keep,
                                    prefetch=not cfg.deterministic)

        out = Path(out_dir) if out_dir is not None else Path(checkpoint).parent / EVAL_DIR
        for i, image in enumerate(result.reconstructions):
            write_ppm(out / f"recon_{i:03d}.ppm", image)
        archive_save(out / "indices.ibqa", {"indices": result.indices.astype(np.int64)})
        export_embeddings_csv(codebook_matrix(model), result.features, out / "embeddings.csv")

        self.console.print(self._metrics_table(f"Evaluation of {Path(checkpoint).name}", {
            "images": len(val),
            "PSNR (dB)": result.psnr,
            "usage": result.usage.usage,
            "codes used": f"{result.usage.used}/{model.codebook.size}",
            "perplexity": result.usage.perplexity,
            "distribution gap": result.gap,
        }))
        self.console.print(f"[green]exports written to[/green] {out}")
        return 0

    def tokenize(self, checkpoint: Path, out_path: Optional[Path] = None,
                 data_cfg: Optional[RunConfig] = None, deterministic: Optional[bool] = None) -> int:
        """Tokenize every image of the dataset into a token file."""
        model, ckpt = load_tokenizer(checkpoint)
        cfg = self._checkpoint_config(ckpt, data_cfg, deterministic)
        dataset = load_dataset(cfg)
        path = Path(out_path) if out_path is not None else cfg.output_dir / TOKENS_FILE
        tokens = tokenize_dataset(model, dataset, path, cfg.optim.batch, prefetch=not cfg.deterministic)
        self.console.print(Panel(f"{len(tokens)} sequences x {tokens.seq_len} tokens, K={tokens.vocab_size}\n{path}",
                                 title="Token dataset", style="green"))
        return 0

    def train_ar(self, cfg: RunConfig, resume: bool = False) -> int:
        with self._progress("AR transformer") as hook:
            result = train_ar(cfg, resume=resume, progress=hook)
        shape = result.state.model.config
        final = result.final
        self.console.print(self._metrics_table(f"AR d={shape.depth} w={shape.width}, epoch {final.get('epoch', 0)}", {
            "parameters": f"{ar_param_count(shape):,}",
            "NLL train": final.get("nll_train", float("nan")),
            "NLL eval": final.get("nll_eval", float("nan")),
            "ln K": math.log(shape.vocab_size),
        }))
        self.console.print(Panel(f"checkpoint: {result.checkpoint}\nmetrics: {result.metrics}",
                                 title="Artifacts", style="green"))
        return 0

    def sample(self, checkpoint: Path, tokenizer: Path, label: int, n: int, seed: Optional[int] = None,
               temperature: Optional[float] = None, top_k: Optional[int] = None,
               out_dir: Optional[Path] = None) -> int:
        """Sample n images of one class and write them as PPM files.

        Seed, temperature and top_k default to the values stored with the checkpoint.
        """
        model, ckpt = load_ar(checkpoint)
        ar = ckpt.config.ar
        seed = ckpt.config.seed if seed is None else seed
        temperature = ar.temperature if temperature is None else temperature
        top_k = (ar.top_k if top_k is None else top_k) or None
        decoder, _ = load_tokenizer(tokenizer)
        images = sample_images(decoder, model, [label] * n, temperature, top_k, seed)
        out = Path(out_dir) if out_dir is not None else Path(checkpoint).parent / "samples"
        for i, image in enumerate(images):
            write_ppm(out / f"sample_{label:03d}_{i:03d}.ppm", image)
        self.console.print(f"[green]{n} samples of class {label} written to[/green] {out}")
        return 0

    def quantcheck(self, seed: int = 0) -> int:
        """Run the gradient-flow suite; exit code 1 when any check fails."""
        report = run_quantcheck(seed)
        table = Table(title="Gradient flow", box=box.SIMPLE_HEAVY)
        table.add_column("Quantizer", style="cyan")
        table.add_column("Check")
        table.add_column("Result", justify="center")
        table.add_column("Detail", style="dim")
        for r in report.results:
            verdict = Text("PASS", style="bold green") if r.passed else Text("FAIL", style="bold red")
            table.add_row(r.quantizer.value, r.name, verdict, r.detail)
        self.console.print(table)

        rows = Table(title="Codebook rows receiving gradient", box=box.SIMPLE)
        rows.add_column("Quantizer", style="cyan")
        rows.add_column("Fraction", justify="right", style="yellow")
        for kind, fraction in report.row_fraction.items():
            rows.add_row(kind.value, "implicit codebook" if fraction is None else f"{fraction:.1%}")
        self.console.print(rows)
        return 0 if report.passed else 1

    def ar_presets(self) -> int:
        """Shapes and parameter counts of the large-scale presets."""
        table = Table(title="AR scaling presets (K=16384, 1000 classes)", box=box.SIMPLE_HEAVY)
        for column in ("Preset", "Depth", "Width", "Heads", "Parameters"):
            table.add_column(column, justify="right" if column != "Preset" else "left")
        for name, depth in PRESET_DEPTHS.items():
            shape = ar_scale_config(depth)
            table.add_row(name, str(depth), str(shape.width), str(shape.heads),
                          f"{ar_param_count(shape) / 1e6:,.0f}M")
        self.console.print(table)
        return 0
