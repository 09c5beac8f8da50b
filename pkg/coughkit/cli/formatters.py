"""Output formatters for CLI commands."""

from typing import Any, Dict, List, Optional

from rich.console import Console
from rich.table import Table

from coughkit.config.models import ExperimentConfig
from coughkit.config.network_models import VitConfig
from coughkit.core.manifest import DatasetManifest, Split
from coughkit.core.pipeline import PipelineResult
from coughkit.nn.vit import param_count
from coughkit.utils.sanitize import sanitize_log_input


def _auroc(value: Optional[float]) -> str:
    return "failed" if value is None else f"{value:.4f}"


class ConfigFormatter:
    """Formats configuration information for display."""

    def __init__(self, console: Console):
        self.console = console

    def format_config_summary(self, config: ExperimentConfig) -> None:
        """Display configuration summary."""
        table = Table(title="Configuration Summary")
        table.add_column("Setting", style="cyan")
        table.add_column("Value", style="green")

        table.add_row("Seed", str(config.seed))
        table.add_row("Output dir", sanitize_log_input(str(config.output_dir)))
        table.add_row("Sample rate", f"{config.audio.target_sample_rate_hz} Hz")
        sr = config.audio.target_sample_rate_hz
        table.add_row(
            "STFT",
            f"hop {config.dsp.stft.hop_samples(sr)}, window {config.dsp.stft.win_samples(sr)}, fft {config.dsp.stft.n_fft(sr)}",
        )
        table.add_row("Mel bins", str(config.dsp.mel.n_mels))
        model = config.model
        table.add_row("Model", f"E={model.embed_dim} M={model.depth} heads={model.n_heads} input {model.in_channels}x{model.height}x{model.width}")
        table.add_row("Parameters", f"{param_count(model):,}")
        table.add_row("Optimizer", config.train.optimizer.value)
        table.add_row("Augmentation", "Enabled" if config.augment.enabled else "Disabled")
        table.add_row("Aggregation", config.eval.aggregation.value)
        table.add_row("Seeds", ", ".join(str(s) for s in config.eval.seeds))
        table.add_row("Config hash", config.config_hash())

        self.console.print(table)

    def format_validation_errors(self, errors: List[str]) -> None:
        """Display configuration validation errors."""
        if not errors:
            self.console.print("[green]Configuration is valid[/green]")
            return

        self.console.print("[red]Configuration Validation Errors:[/red]")
        for i, error in enumerate(errors, 1):
            self.console.print(f"  {i}. {sanitize_log_input(error)}")

    def format_manifest_summary(self, manifest: DatasetManifest) -> None:
        table = Table(title="Manifest Summary")
        table.add_column("Split", style="cyan")
        table.add_column("Rows", justify="right")
        table.add_column("Negative", justify="right")
        table.add_column("Positive", justify="right")
        table.add_column("Subjects", justify="right")
        for split in Split:
            n_neg, n_pos = manifest.counts(split)
            table.add_row(split.value, str(n_neg + n_pos), str(n_neg), str(n_pos), str(len(manifest.subjects(split))))
        self.console.print(table)


class ModelFormatter:
    """Formats model shapes and parameter counts."""

    def __init__(self, console: Console):
        self.console = console

    def format_models(self, models: Dict[str, VitConfig]) -> None:
        table = Table(title="Model Shapes")
        table.add_column("Name", style="cyan")
        table.add_column("E", justify="right")
        table.add_column("Depth", justify="right")
        table.add_column("Heads", justify="right")
        table.add_column("Input")
        table.add_column("Patches", justify="right")
        table.add_column("Classes", justify="right")
        table.add_column("Parameters", justify="right", style="green")
        for name, cfg in models.items():
            table.add_row(
                name,
                str(cfg.embed_dim),
                str(cfg.depth),
                str(cfg.n_heads),
                f"{cfg.in_channels}x{cfg.height}x{cfg.width}",
                str(cfg.n_patches),
                str(cfg.n_classes),
                f"{param_count(cfg):,}",
            )
        self.console.print(table)


class ResultFormatter:
    """Formats pipeline outcomes."""

    def __init__(self, console: Console):
        self.console = console

    def format_pipeline_result(self, result: PipelineResult) -> None:
        table = Table(title=f"{result.command.value} finished")
        table.add_column("Key", style="cyan")
        table.add_column("Value", style="green")
        for key, value in result.summary.items():
            if isinstance(value, (dict, list)):
                continue
            table.add_row(key, sanitize_log_input(str(value)))
        table.add_row("Artifacts", str(len(result.artifacts)))
        table.add_row("Output dir", sanitize_log_input(str(result.out_dir)))
        self.console.print(table)

    def format_eval_report(self, report: Dict[str, Any], title: str = "Evaluation") -> None:
        table = Table(title=title)
        table.add_column("Seed", style="cyan", justify="right")
        table.add_column("AUROC", justify="right")
        for seed, value in zip(report["seeds"], report["per_seed_auroc"]):
            table.add_row(str(seed), _auroc(value))
        table.add_row("mean", _auroc(report["mean_auroc"]), style="bold")
        self.console.print(table)
        self.console.print(
            f"[dim]{report['aggregation']}: {report['n_pos']} positive, {report['n_neg']} negative; "
            f"{report['n_successful']}/{len(report['seeds'])} seeds succeeded[/dim]"
        )

    def format_sam_ablation(self, reports: Dict[str, Dict[str, Any]]) -> None:
        names = list(reports)
        table = Table(title="SAM Ablation")
        table.add_column("Seed", style="cyan", justify="right")
        for name in names:
            table.add_column(name, justify="right")
        seeds = reports[names[0]]["seeds"]
        for i, seed in enumerate(seeds):
            table.add_row(str(seed), *(_auroc(reports[name]["per_seed_auroc"][i]) for name in names))
        table.add_row("mean", *(_auroc(reports[name]["mean_auroc"]) for name in names), style="bold")
        self.console.print(table)
