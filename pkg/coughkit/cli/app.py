"""Main CLI application."""

import json
from pathlib import Path
from typing import Any, Dict, NoReturn, Optional

import structlog
import typer
from rich.console import Console
from rich.progress import Progress, SpinnerColumn, TextColumn

from coughkit.cli.factory import ComponentFactory
from coughkit.cli.formatters import ConfigFormatter, ModelFormatter, ResultFormatter
from coughkit.config.loader import validate_checkpoint_refs
from coughkit.config.network_models import MODEL_PRESETS, get_preset
from coughkit.core.manifest import parse_manifest
from coughkit.core.pipeline import Command, PipelineResult
from coughkit.exceptions import CoughKitError

# Initialize rich console for output
console = Console()
logger = structlog.get_logger(__name__)

app = typer.Typer(
    name="coughkit",
    help="Cough-sound classification: segmentation, log-mel features, ViT pretraining, fine-tuning and evaluation.",
    rich_markup_mode="rich",
    no_args_is_help=True,
)

ConfigOption = typer.Option(None, "--config", "-c", help="Path to configuration file (JSON or YAML)")
SeedOption = typer.Option(None, "--seed", help="Overrides the experiment seed")
OutOption = typer.Option(None, "--out", "-o", help="Output directory (overrides output_dir)")
ManifestOption = typer.Option(..., "--manifest", "-m", help="Dataset manifest CSV")


def fail(error: Exception, exit_code: int = 1) -> NoReturn:
    """Write a machine-readable error to stderr and exit nonzero."""
    if isinstance(error, CoughKitError):
        payload: Dict[str, Any] = error.to_dict()
    else:
        payload = {"error": type(error).__name__, "message": str(error), "context": {}}
        exit_code = 2
    typer.echo(json.dumps(payload, sort_keys=True), err=True)
    raise typer.Exit(exit_code)


def run_command(
    command: Command,
    config_file: Optional[Path],
    seed: Optional[int],
    out_dir: Optional[Path],
    manifest: Path,
) -> PipelineResult:
    """Load config, check it serves the command and run the pipeline."""
    try:
        settings = ComponentFactory.create_settings()
        config = ComponentFactory.load_config(config_file, seed, out_dir)
        ComponentFactory.configure_logging(config, settings)
        ComponentFactory.check_command(config, command.value)
        runner = ComponentFactory.create_pipeline_runner(config, settings)

        with Progress(
            SpinnerColumn(),
            TextColumn("[progress.description]{task.description}"),
            console=console,
            transient=True,
        ) as progress:
            progress.add_task(f"Running {command.value}...", total=None)
            result = runner.run(command, manifest)
    except typer.Exit:
        raise
    except Exception as e:
        fail(e)

    ResultFormatter(console).format_pipeline_result(result)
    return result


@app.command()
def segment(
    config_file: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    out_dir: Optional[Path] = OutOption,
    manifest: Path = ManifestOption,
) -> None:
    """Cut every recording into fixed-length cough segments."""
    run_command(Command.SEGMENT, config_file, seed, out_dir, manifest)


@app.command()
def featurize(
    config_file: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    out_dir: Optional[Path] = OutOption,
    manifest: Path = ManifestOption,
) -> None:
    """Write log-mel spectrogram files and a features manifest."""
    run_command(Command.FEATURIZE, config_file, seed, out_dir, manifest)


@app.command()
def pretrain(
    config_file: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    out_dir: Optional[Path] = OutOption,
    manifest: Path = ManifestOption,
) -> None:
    """Teacher-student self-supervised pretraining on the training split."""
    run_command(Command.PRETRAIN, config_file, seed, out_dir, manifest)


@app.command()
def finetune(
    config_file: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    out_dir: Optional[Path] = OutOption,
    manifest: Path = ManifestOption,
) -> None:
    """Supervised fine-tuning; writes model.ckpt and metrics.csv."""
    run_command(Command.FINETUNE, config_file, seed, out_dir, manifest)


@app.command()
def evaluate(
    config_file: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    out_dir: Optional[Path] = OutOption,
    manifest: Path = ManifestOption,
) -> None:
    """AUROC report from manifest scores, a saved model, or per-seed fine-tuning."""
    result = run_command(Command.EVALUATE, config_file, seed, out_dir, manifest)
    ResultFormatter(console).format_eval_report(result.summary)


@app.command()
def predict(
    config_file: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    out_dir: Optional[Path] = OutOption,
    manifest: Path = ManifestOption,
) -> None:
    """Score every manifest row with the model at eval.checkpoint."""
    run_command(Command.PREDICT, config_file, seed, out_dir, manifest)


@app.command("sam-ablation")
def sam_ablation(
    config_file: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    out_dir: Optional[Path] = OutOption,
    manifest: Path = ManifestOption,
) -> None:
    """Fine-tune with and without SAM over eval.seeds and compare AUROC."""
    result = run_command(Command.SAM_ABLATION, config_file, seed, out_dir, manifest)
    ResultFormatter(console).format_sam_ablation(result.summary)


@app.command()
def validate(
    config_file: Optional[Path] = ConfigOption,
    manifest: Optional[Path] = typer.Option(None, "--manifest", "-m", help="Also validate this manifest"),
    command: Optional[Command] = typer.Option(None, "--command", help="Check the config serves this command"),
) -> None:
    """Validate a configuration file (and optionally a manifest)."""
    console.print("[blue]Validating configuration...[/blue]")
    try:
        config = ComponentFactory.load_config(config_file)
        formatter = ConfigFormatter(console)
        formatter.format_config_summary(config)
        if command is not None:
            errors = validate_checkpoint_refs(config, command.value)
            formatter.format_validation_errors(errors)
            if errors:
                raise typer.Exit(1)
        if manifest is not None:
            formatter.format_manifest_summary(parse_manifest(manifest))
    except typer.Exit:
        raise
    except Exception as e:
        fail(e)
    console.print("[green]✓ Configuration is valid[/green]")


@app.command("describe-model")
def describe_model(
    preset: Optional[str] = typer.Option(None, "--preset", "-p", help="Preset name; all presets when omitted"),
    config_file: Optional[Path] = typer.Option(None, "--config", "-c", help="Describe the model of this config"),
) -> None:
    """Print model shapes and exact parameter counts."""
    try:
        if config_file is not None:
            models = {"config": ComponentFactory.load_config(config_file).model}
        elif preset is not None:
            models = {preset: get_preset(preset)}
        else:
            models = dict(MODEL_PRESETS)
    except KeyError as e:
        fail(CoughKitError(str(e.args[0]), preset=preset))
    except Exception as e:
        fail(e)
    ModelFormatter(console).format_models(models)


if __name__ == "__main__":
    app()
