"""Command line surface: scoring, pair construction, synthetic data,
training, retouching, evaluation sweeps, and the HTTP service."""

from __future__ import annotations

import json
from pathlib import Path

import click
import numpy as np

from .attributes import (
    AS_PRINTED_CONSTANTS,
    HERNANDEZ_CONSTANTS,
    ScoreOptions,
    score_json,
    score_vector,
)


def _score_opts(ctx) -> ScoreOptions:
    return ctx.obj["score_opts"]


def _fail(exc: Exception) -> None:
    raise click.ClickException(str(exc))


def _parse_c(text: str) -> np.ndarray:
    try:
        parts = [float(v) for v in text.split(",")]
    except ValueError:
        raise click.BadParameter(f"expected four comma-separated floats, got {text!r}")
    if len(parts) != 4:
        raise click.BadParameter("condition needs exactly four components")
    return np.array(parts)


@click.group()
@click.option("--cct-as-printed", is_flag=True,
              help="Use the widely-copied (typo'd) CCT constants.")
@click.option("--linearize", type=click.Choice(["srgb", "none"]), default="srgb",
              show_default=True, help="Linearization before the XYZ transform.")
@click.option("--contrast-channel", type=click.Choice(["rgb", "luma"]), default="rgb",
              show_default=True, help="Channels the contrast score sums over.")
@click.pass_context
def main(ctx, cct_as_printed, linearize, contrast_channel):
    """Attribute-conditioned diffusion retouching with an affine bilateral grid."""
    ctx.ensure_object(dict)
    ctx.obj["score_opts"] = ScoreOptions(
        cct=AS_PRINTED_CONSTANTS if cct_as_printed else HERNANDEZ_CONSTANTS,
        linearize=linearize,
        contrast_channel=contrast_channel,
    )


@main.command()
@click.argument("image", type=click.Path(exists=True, dir_okay=False))
@click.pass_context
def score(ctx, image):
    """Print the four attribute scores of IMAGE as JSON."""
    from .imagecore import load_image

    try:
        s = score_vector(load_image(image), _score_opts(ctx))
    except Exception as exc:
        _fail(exc)
    click.echo(score_json(s))


@main.command()
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), default="pairs.jsonl",
              show_default=True)
@click.pass_context
def pair(ctx, manifest, out):
    """Construct image-condition pairs from MANIFEST into a JSONL file."""
    from .conditioning import emit_pairs, load_manifest

    try:
        groups = load_manifest(manifest)
        n = emit_pairs(groups, out, _score_opts(ctx))
    except Exception as exc:
        _fail(exc)
    click.echo(f"wrote {n} pairs to {out}")


@main.command()
@click.option("--seed", type=int, default=7, show_default=True)
@click.option("--groups", "n_groups", type=int, default=64, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), default="synth", show_default=True)
@click.option("--size", type=int, default=64, show_default=True)
@click.pass_context
def synth(ctx, seed, n_groups, out, size):
    """Generate a synthetic multi-expert dataset with a manifest."""
    from .training import synth_dataset

    try:
        manifest = synth_dataset(seed, n_groups, out, size=size, opts=_score_opts(ctx))
    except Exception as exc:
        _fail(exc)
    click.echo(f"wrote {manifest}")


@main.command()
@click.option("--manifest", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", type=click.Path(file_okay=False), default="run", show_default=True)
@click.option("--epochs", type=int, default=100, show_default=True)
@click.option("--lr", type=float, default=1e-3, show_default=True)
@click.option("--batch-size", type=int, default=16, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--lambda-cl", type=float, default=1.0, show_default=True)
@click.option("--beta-pixel", type=float, default=0.01, show_default=True)
@click.option("--tau", type=float, default=0.1, show_default=True)
@click.option("--cl-warmup", type=int, default=0, show_default=True,
              help="Reconstruction-only epochs before the contrastive term.")
@click.option("--resume", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--quiet", is_flag=True)
@click.pass_context
def train(ctx, manifest, out, epochs, lr, batch_size, seed, lambda_cl, beta_pixel,
          tau, cl_warmup, resume, quiet):
    """Train the retouching model on a manifest; writes checkpoint + log."""
    from .training import TrainConfig, fit

    cfg = TrainConfig(
        lambda_cl=lambda_cl, beta_pixel=beta_pixel, tau=tau,
        learning_rate=lr, batch_size=batch_size, epochs=epochs, seed=seed,
        cl_warmup_epochs=cl_warmup,
    )
    try:
        _, log = fit(manifest, cfg, out, score_opts=_score_opts(ctx),
                     resume=resume, verbose=not quiet)
    except Exception as exc:
        _fail(exc)
    click.echo(f"trained {epochs} epochs; final loss {log[-1]['total']:.5f}; "
               f"checkpoint at {Path(out) / 'checkpoint.bin'}")


def _load_model(checkpoint):
    from .training import load_checkpoint

    if checkpoint is None:
        raise click.ClickException(
            "no checkpoint given (use --checkpoint or GRIDTOUCH_CHECKPOINT)"
        )
    return load_checkpoint(checkpoint)


@main.command()
@click.argument("image", type=click.Path(exists=True, dir_okay=False))
@click.option("--c", "condition", default="0,0,0,0", show_default=True,
              help="Four comma-separated coefficients.")
@click.option("--steps", type=int, default=20, show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--extended", is_flag=True, help="Allow |c_i| up to 3.")
@click.option("--checkpoint", envvar="GRIDTOUCH_CHECKPOINT",
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="Output PNG path (default: <image>.retouched.png).")
@click.pass_context
def retouch(ctx, image, condition, steps, seed, extended, checkpoint, out):
    """Sample a retouched version of IMAGE under a condition vector."""
    from .conditioning import validate_condition
    from .diffusion import sample
    from .imagecore import load_image, save_image

    c = _parse_c(condition)
    try:
        validate_condition(c, extended=extended)
        model = _load_model(checkpoint)
        img = load_image(image)
        result = sample(model, img, c, n_steps=steps, seed=seed)
        out = Path(out) if out else Path(image).with_suffix(".retouched.png")
        save_image(result.image, out)
        scores = score_vector(result.image, _score_opts(ctx)).to_dict()
    except click.ClickException:
        raise
    except Exception as exc:
        _fail(exc)
    click.echo(json.dumps({"out": str(out), "seed": result.seed, "scores": scores}))


@main.command(name="range")
@click.option("--checkpoint", envvar="GRIDTOUCH_CHECKPOINT",
              type=click.Path(exists=True, dir_okay=False))
@click.option("--steps", type=int, default=20, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--eval-dir", type=click.Path(file_okay=False), default="eval_set",
              show_default=True, help="Where the pinned eval set is generated.")
@click.option("--out", type=click.Path(dir_okay=False), default="range_report.json",
              show_default=True)
@click.pass_context
def range_cmd(ctx, checkpoint, steps, seed, eval_dir, out):
    """Adjustable-range / decoupling report over the pinned eval set."""
    from .evaluation import make_eval_set, range_report

    try:
        model = _load_model(checkpoint)
        inputs = make_eval_set(eval_dir, size=model.cfg.latent_size)
        report = range_report(model, inputs, n_steps=steps, seed=seed,
                              opts=_score_opts(ctx))
        Path(out).write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    except click.ClickException:
        raise
    except Exception as exc:
        _fail(exc)
    click.echo(f"wrote {out}; decoupled = {report.decoupled()}")


@main.command()
@click.argument("image", type=click.Path(exists=True, dir_okay=False))
@click.option("--checkpoint", envvar="GRIDTOUCH_CHECKPOINT",
              type=click.Path(exists=True, dir_okay=False))
@click.option("--c", "condition", default="0,0,0,0", show_default=True)
@click.option("--steps", default="2,10,20", show_default=True,
              help="Comma-separated step counts.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), default="sweep", show_default=True)
@click.pass_context
def sweep(ctx, image, checkpoint, condition, steps, seed, out):
    """Sample IMAGE at several step counts with a shared seed."""
    from .evaluation import step_sweep
    from .imagecore import load_image

    try:
        counts = [int(v) for v in steps.split(",")]
        model = _load_model(checkpoint)
        step_sweep(model, load_image(image), _parse_c(condition), counts,
                   seed=seed, out_dir=out, opts=_score_opts(ctx))
    except click.ClickException:
        raise
    except Exception as exc:
        _fail(exc)
    click.echo(f"wrote {len(counts)} sweep entries to {out}")


@main.command()
@click.argument("image", type=click.Path(exists=True, dir_okay=False))
@click.option("--checkpoint", envvar="GRIDTOUCH_CHECKPOINT",
              type=click.Path(exists=True, dir_okay=False))
@click.option("--c", "condition", default="0,0,0,0", show_default=True)
@click.option("--steps", type=int, default=20, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), default="trace", show_default=True)
@click.pass_context
def trace(ctx, image, checkpoint, condition, steps, seed, out):
    """Dump every intermediate result and grid of one sampling run."""
    from .evaluation import trace_dump
    from .imagecore import load_image

    try:
        model = _load_model(checkpoint)
        manifest = trace_dump(model, load_image(image), _parse_c(condition),
                              n_steps=steps, seed=seed, out_dir=out)
    except click.ClickException:
        raise
    except Exception as exc:
        _fail(exc)
    click.echo(f"wrote {len(manifest['steps'])} trace steps to {out}")


@main.command()
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--checkpoint", envvar="GRIDTOUCH_CHECKPOINT",
              type=click.Path(exists=True, dir_okay=False))
@click.option("--session-log", type=click.Path(dir_okay=False), default=None)
@click.option("--frontend", type=click.Path(file_okay=False), default=None,
              help="Static UI directory to mount at /ui.")
@click.pass_context
def serve(ctx, port, host, checkpoint, session_log, frontend):
    """Run the HTTP retouching service."""
    import uvicorn

    from .service import create_app

    app = create_app(
        checkpoint=checkpoint,
        score_opts=_score_opts(ctx),
        session_log=session_log,
        frontend_dir=frontend,
    )
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
