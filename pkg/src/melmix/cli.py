"""Command-line surface: data generation, fitting, sampling, filtering,
metrics, Griffin-Lim vocoding and the end-to-end degradation study.

Every subcommand is deterministic under fixed flags and inputs; diagnostics
go to stderr, data to files or stdout.
"""

from __future__ import annotations

import os
import sys

import click
import numpy as np

from . import filters, formats, plotting, sampling, spectral, synth, trainer
from .errors import MelmixError
from .spectral import DEFAULT_MEL, DEFAULT_STFT, MelSpectrogram


def _fail(message: str) -> "NoReturn":
    raise click.ClickException(message)


@click.group()
def main():
    """Trivariate-chain Gaussian mixture modelling of mel-spectrograms."""


@main.command("gen")
@click.option("--spec", "spec_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Generator spec as JSON; omit for the built-in default.")
@click.option("--default", "use_default", is_flag=True, help="Use the default bimodal spec.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--n", "n_per_condition", type=int, default=50, show_default=True,
              help="Samples per condition.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--hist", "hist_dir", type=click.Path(file_okay=False), default=None,
              help="Also write per-condition marginal histograms (CSV + PNG) here.")
def cmd_gen(spec_path, use_default, out_path, n_per_condition, seed, hist_dir):
    """Generate a synthetic conditioned dataset (TVDS)."""
    if n_per_condition < 1:
        _fail("--n must be >= 1")
    if spec_path is not None:
        with open(spec_path) as fh:
            text = fh.read()
        try:
            gen_spec = synth.SynthSpec.from_json(text)
        except MelmixError as exc:
            _fail(str(exc))
        gen_spec = synth.SynthSpec(
            patterns=gen_spec.patterns, mode_weights=gen_spec.mode_weights,
            noise_std=gen_spec.noise_std, rho_t=gen_spec.rho_t, rho_f=gen_spec.rho_f,
            seed=seed,
        )
    else:
        gen_spec = synth.SynthSpec.default(seed=seed)
    dataset = synth.generate(gen_spec, n_per_condition)
    formats.write_tvds(out_path, dataset)
    click.echo(f"wrote {len(dataset)} records to {out_path}", err=True)
    if hist_dir is not None:
        os.makedirs(hist_dir, exist_ok=True)
        T, F = gen_spec.grid_shape
        for cond in dataset.conditions:
            edges, counts = synth.marginal_histogram(dataset, cond, "time", F // 2)
            csv_path = os.path.join(hist_dir, f"hist_condition_{cond}.csv")
            with open(csv_path, "w") as fh:
                fh.write("bin_low,bin_high,count\n")
                for lo, hi, c in zip(edges[:-1], edges[1:], counts):
                    fh.write(f"{lo:.6f},{hi:.6f},{c}\n")
            plotting.save_histogram(
                edges, counts, os.path.join(hist_dir, f"hist_condition_{cond}.png"),
                title=f"condition {cond}, frequency bin {F // 2}",
            )


@main.command("fit")
@click.option("--data", "data_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--head", type=click.Choice(["tvcgmm", "mse"]), default="tvcgmm", show_default=True)
@click.option("--k", "n_components", type=int, default=1, show_default=True)
@click.option("--steps", type=int, default=2000, show_default=True)
@click.option("--lr", type=float, default=0.01, show_default=True)
@click.option("--log-every", type=int, default=100, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
def cmd_fit(data_path, head, n_components, steps, lr, log_every, seed, out_dir):
    """Fit per-condition parameter tables and persist the model bundle."""
    if head == "mse" and n_components != 1:
        click.echo("warning: --head mse ignores --k", err=True)
        n_components = 1
    try:
        dataset = formats.read_tvds(data_path)
        cfg = trainer.TrainConfig(
            K=n_components, steps=steps, learning_rate=lr, head=head,
            seed=seed, log_every=log_every,
        )
        bundle = trainer.fit(dataset, cfg)
        trainer.save_bundle(out_dir, bundle)
    except (MelmixError, ValueError) as exc:
        _fail(str(exc))
    losses = ", ".join(f"{c}: {bundle.final_losses[c]:.4f}" for c in bundle.conditions)
    click.echo(f"final losses per condition: {losses}", err=True)
    plotting.save_loss_curve(
        bundle.loss_curve, os.path.join(out_dir, "loss_curve.png"),
        ylabel="NLL" if head == "tvcgmm" else "MSE",
    )


@main.command("sample")
@click.option("--model", "model_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--condition", type=int, required=True)
@click.option("--mode", type=click.Choice(["naive", "conditional", "mean"]), default="naive",
              show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--temperature", type=float, default=1.0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def cmd_sample(model_dir, condition, mode, seed, temperature, out_path):
    """Draw one spectrogram from a fitted model (TFG1 output)."""
    try:
        bundle = trainer.load_bundle(model_dir)
    except (OSError, MelmixError) as exc:
        _fail(f"cannot load model: {exc}")
    if bundle.head != "tvcgmm":
        if mode != "mean":
            _fail("mse models only support --mode mean")
        if condition not in bundle.mean_tables:
            _fail(f"unknown condition {condition}")
        formats.write_tfg1(out_path, bundle.mean_tables[condition])
        return
    if condition not in bundle.fields:
        _fail(f"unknown condition {condition}")
    field = bundle.fields[condition]
    try:
        cfg = sampling.SampleConfig(mode=mode, seed=seed, temperature=temperature)
    except ValueError as exc:
        _fail(str(exc))
    if mode == "naive":
        spec = sampling.sample_naive(field, cfg)
    elif mode == "conditional":
        spec = sampling.sample_conditional(field, cfg)
    else:
        spec = sampling.mean_field(field)
    formats.write_tfg1(out_path, spec.values)


@main.command("filter")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--op", type=click.Choice(["smooth", "sharpen"]), required=True)
@click.option("--sigma", type=float, default=1.0, show_default=True, help="Gaussian sigma (smooth).")
@click.option("--strength", type=float, default=1.0, show_default=True,
              help="Laplacian boost (sharpen).")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def cmd_filter(in_path, op, sigma, strength, out_path):
    """Smooth or sharpen a TFG1 spectrogram."""
    try:
        values = formats.read_tfg1(in_path)
        if op == "smooth":
            out = filters.smooth(values, sigma)
        else:
            out = filters.sharpen(values, strength)
    except (MelmixError, ValueError) as exc:
        _fail(str(exc))
    formats.write_tfg1(out_path, out)


@main.command("varl")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
def cmd_varl(in_path):
    """Print the Laplacian-variance smoothness of a TFG1 spectrogram."""
    try:
        value = filters.var_laplacian(formats.read_tfg1(in_path))
    except (MelmixError, ValueError) as exc:
        _fail(str(exc))
    click.echo(f"{value:.6f}")


@main.command("vocode")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--iters", type=int, default=60, show_default=True)
@click.option("--momentum", type=float, default=0.99, show_default=True)
@click.option("--nnls", "use_nnls", is_flag=True, help="Use NNLS mel inversion instead of pinv.")
def cmd_vocode(in_path, out_path, iters, momentum, use_nnls):
    """Reconstruct audio from a log-mel TFG1 via Griffin-Lim."""
    try:
        mel = MelSpectrogram(formats.read_tfg1(in_path), DEFAULT_MEL)
        linear = spectral.mel_to_linear(mel, DEFAULT_STFT, method="nnls" if use_nnls else "pinv")
        audio, convergence = spectral.griffin_lim(
            linear, DEFAULT_STFT, n_iter=iters, momentum=momentum,
            sample_rate=DEFAULT_MEL.sample_rate,
        )
    except (MelmixError, ValueError) as exc:
        _fail(str(exc))
    spectral.write_wav(out_path, audio)
    click.echo(f"spectral convergence: {convergence:.6f}", err=True)


@main.command("analyze")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def cmd_analyze(in_path, out_path):
    """Compute the log-mel spectrogram of a WAV file (TFG1 output)."""
    try:
        audio = spectral.read_wav(in_path)
        if audio.sample_rate != DEFAULT_MEL.sample_rate:
            click.echo(
                f"warning: sample rate {audio.sample_rate} differs from the "
                f"analysis default {DEFAULT_MEL.sample_rate}", err=True,
            )
        mel = spectral.mel_spectrogram(audio, DEFAULT_STFT, DEFAULT_MEL)
    except (MelmixError, ValueError) as exc:
        _fail(str(exc))
    formats.write_tfg1(out_path, mel.values)


@main.command("lsd")
@click.option("--a", "path_a", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--b", "path_b", required=True, type=click.Path(exists=True, dir_okay=False))
def cmd_lsd(path_a, path_b):
    """Print the log-spectral distance (RMS difference) of two TFG1 files."""
    try:
        value = spectral.log_spectral_distance(formats.read_tfg1(path_a), formats.read_tfg1(path_b))
    except (MelmixError, ValueError) as exc:
        _fail(str(exc))
    click.echo(f"{value:.6f}")


def _study_rows_data(dataset, seed, steps, n_eval):
    rows = []
    conditions = dataset.conditions
    gt_mean = {c: dataset.for_condition(c).mean(axis=0) for c in conditions}
    for cond in conditions:
        var_l = float(np.mean([filters.var_laplacian(v) for v in dataset.for_condition(cond)]))
        rows.append(("gt", "data", cond, var_l, None, 0.0))

    def lsd_to_gt(cond, values):
        return spectral.log_spectral_distance(values, gt_mean[cond])

    mse_cfg = trainer.TrainConfig(K=1, steps=steps, learning_rate=0.05, head="mse", seed=seed)
    mse_bundle = trainer.fit(dataset, mse_cfg)
    for cond in conditions:
        table = mse_bundle.mean_tables[cond]
        rows.append((
            "mse", "mean", cond, filters.var_laplacian(table),
            None, lsd_to_gt(cond, table),
        ))

    bundles = {}
    for k in (1, 5):
        cfg = trainer.TrainConfig(K=k, steps=steps, head="tvcgmm", seed=seed)
        bundle = trainer.fit(dataset, cfg)
        bundles[k] = bundle
        model = f"tvcgmm-k{k}"
        for cond in conditions:
            field = bundle.fields[cond]
            nll_value = bundle.final_losses[cond]
            mean_spec = sampling.mean_field(field).values
            rows.append((model, "mean", cond, filters.var_laplacian(mean_spec),
                         nll_value, lsd_to_gt(cond, mean_spec)))
            for mode, draw in (
                ("naive", sampling.sample_naive),
                ("conditional", sampling.sample_conditional),
            ):
                vls, lsds = [], []
                for i in range(n_eval):
                    spec = draw(field, sampling.SampleConfig(mode, seed + i))
                    vls.append(filters.var_laplacian(spec.values))
                    lsds.append(lsd_to_gt(cond, spec.values))
                rows.append((model, mode, cond, float(np.mean(vls)),
                             nll_value, float(np.mean(lsds))))
    return rows, bundles


def _study_rows_wav(wav_path, iters, momentum):
    audio = spectral.read_wav(wav_path)
    mel = spectral.mel_spectrogram(audio, DEFAULT_STFT, DEFAULT_MEL)

    def reconstruct(values):
        spec = MelSpectrogram(values, DEFAULT_MEL)
        linear = spectral.mel_to_linear(spec, DEFAULT_STFT)
        out_audio, _ = spectral.griffin_lim(
            linear, DEFAULT_STFT, n_iter=iters, momentum=momentum,
            sample_rate=audio.sample_rate,
        )
        rebuilt = spectral.mel_spectrogram(out_audio, DEFAULT_STFT, DEFAULT_MEL)
        n = min(rebuilt.values.shape[0], mel.values.shape[0])
        return spectral.log_spectral_distance(rebuilt.values[:n], mel.values[:n])

    rows = []
    variants = (
        ("gt", mel.values),
        ("smooth", filters.smooth(mel.values, 1.0)),
        ("sharpen", filters.sharpen(mel.values, 1.0)),
    )
    for name, values in variants:
        rows.append((name, "vocode", 0, filters.var_laplacian(values), None, reconstruct(values)))
    return rows


def _write_report(rows, out_path):
    def fmt(x):
        return "" if x is None else f"{x:.6f}"

    with open(out_path, "w") as fh:
        fh.write("model,mode,condition,var_l,nll,lsd\n")
        for model, mode, cond, var_l, nll_value, lsd_value in rows:
            fh.write(f"{model},{mode},{cond},{fmt(var_l)},{fmt(nll_value)},{fmt(lsd_value)}\n")


@main.command("study")
@click.option("--data", "data_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--wav", "wav_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--steps", type=int, default=500, show_default=True, help="Training steps per fit.")
@click.option("--n-eval", type=int, default=5, show_default=True,
              help="Samples averaged per stochastic mode.")
@click.option("--figures/--no-figures", default=True, show_default=True,
              help="Render PNG figures next to the CSV report.")
def cmd_study(data_path, wav_path, out_path, seed, steps, n_eval, figures):
    """One-shot experiment: fit, sample, and tabulate smoothness/fit metrics."""
    if (data_path is None) == (wav_path is None):
        _fail("exactly one of --data or --wav is required")
    try:
        if data_path is not None:
            dataset = formats.read_tvds(data_path)
            rows, bundles = _study_rows_data(dataset, seed, steps, n_eval)
        else:
            rows = _study_rows_wav(wav_path, iters=60, momentum=0.99)
            bundles = None
    except (MelmixError, ValueError) as exc:
        _fail(str(exc))
    _write_report(rows, out_path)
    click.echo(f"wrote {len(rows)} report rows to {out_path}", err=True)
    if figures:
        stem, _ = os.path.splitext(out_path)
        labels = [f"{m}/{md}" for m, md, c, *_ in rows if c in (0, "0")]
        values = [v for m, md, c, v, *_ in rows if c in (0, "0")]
        plotting.save_varl_bars(labels, values, f"{stem}_varl.png")
        if bundles is not None:
            cond0 = sorted(bundles[5].fields)[0]
            field = bundles[5].fields[cond0]
            dataset_example = formats.read_tvds(data_path).for_condition(cond0)[0]
            panels = [
                ("ground truth", dataset_example),
                ("mean field", sampling.mean_field(field).values),
                ("naive sample", sampling.sample_naive(
                    field, sampling.SampleConfig("naive", seed)).values),
                ("conditional sample", sampling.sample_conditional(
                    field, sampling.SampleConfig("conditional", seed)).values),
            ]
            plotting.save_spectrogram_grid(panels, f"{stem}_spectrograms.png")


if __name__ == "__main__":
    main()
