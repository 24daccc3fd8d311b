"""
Command-line surface: one subcommand per pipeline stage, every run leaving
a manifest next to its outputs.
"""

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd
from dotenv import load_dotenv

from sgnn.architecture import build_architecture, build_context, build_field
from sgnn.basis_fields import write_basis_csv
from sgnn.chaos_verify import chaos_table
from sgnn.config import RunConfig, config_hash, load_config, write_manifest
from sgnn.data_io import TrainedModel, generate_synthetic, load_dataset, load_model, save_dataset, save_model
from sgnn.evaluation import evaluate_model, pdf_curves
from sgnn.exceptions import ConfigError, SgnnError
from sgnn.geometry import build_torus_mesh, export_mesh
from sgnn.latent_field import field_realization, pca_error, spectrum_table
from sgnn.models import Split
from sgnn.neuron_process import write_neurons_csv
from sgnn.topology import write_edges_csv
from sgnn.training import train

load_dotenv()

logger = logging.getLogger(__name__)


def _mesh(args, config: RunConfig) -> None:
    mesh = build_torus_mesh(config.torus())
    out = Path(args.mesh_out)
    export_mesh(mesh, out)
    write_manifest(out.parent, config, "mesh", {"n_nodes": mesh.n_nodes, "n_elements": mesh.n_elements,
                                                  "total_area": repr(mesh.total_area)})
    print(f"n_nodes = {mesh.n_nodes}")
    print(f"n_elements = {mesh.n_elements}")
    print(f"total_area = {mesh.total_area:.6f}")


def _field(args, config: RunConfig) -> None:
    context = build_context(config)
    field = build_field(config.initial_theta(), context)
    trace = field.trace_cu if field.trace_cu is not None else float(field.lambda_m.sum())
    written = []
    if args.spectrum_out:
        path = Path(args.spectrum_out)
        path.parent.mkdir(parents=True, exist_ok=True)
        spectrum_table(field, trace).to_csv(path, index=False, float_format="%.17g")
        written.append(path)
    if args.basis_out:
        written.append(write_basis_csv(args.basis_out, context.basis1, context.basis2))
    if args.field_out:
        path = Path(args.field_out)
        path.parent.mkdir(parents=True, exist_ok=True)
        nodes = context.mesh.nodes
        values = field_realization(field, context.germs.eta_arch[:field.m])
        pd.DataFrame({"x": nodes[:, 0], "y": nodes[:, 1], "z": nodes[:, 2], "u": values}).to_csv(
            path, index=False, float_format="%.17g")
        written.append(path)
    error = pca_error(field, trace)
    directory = Path(args.out) if args.out else (written[0].parent if written else None)
    if directory is not None:
        write_manifest(directory, config, "field", {"m": field.m, "pca_error": repr(error)})
    else:
        logger.info("field: no outputs requested, manifest skipped")
    print(f"m = {field.m}")
    print(f"pca_error = {error:.6g}")


def _architecture(args, config: RunConfig) -> None:
    context = build_context(config)
    architecture = build_architecture(config.initial_theta(), context)
    neurons = write_neurons_csv(args.neurons_out, context.mesh, architecture.neurons, architecture.roles())
    write_edges_csv(args.edges_out, architecture.topology)
    n_edges = architecture.topology.n_edges
    write_manifest(neurons.parent, config, "architecture",
                   {"n_edges": n_edges, "threshold": repr(float(architecture.topology.threshold))})
    print(f"edges = {n_edges}")


def _generate_data(args, config: RunConfig) -> None:
    seed = config.master_seed if args.seed is None else args.seed
    train_set, test_set = generate_synthetic(args.n_train, args.n_test, config.n_in, config.n_out, seed)
    out = Path(args.out)
    save_dataset(out / "train.csv", train_set)
    save_dataset(out / "test.csv", test_set)
    write_manifest(out, config, "generate-data", {"data_seed": seed, "n_train": args.n_train, "n_test": args.n_test})


def _train(args, config: RunConfig) -> None:
    data = load_dataset(args.data, Split.TRAIN)
    context = build_context(config)
    result = train(context, data, config.train_config())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model = TrainedModel(theta=result.theta, config=config, germs=context.germs, selectors=result.selectors,
                         metadata={"nll_train": repr(result.loss), "spectral_radius": repr(result.spectral_radius),
                                   "n_d": str(len(data)), "config_sha256": config_hash(config)})
    save_model(out / "model.txt", model)
    result.trace.write_csv(out / "trace.csv")
    result.grid.table.to_csv(out / "grid.csv", index=False, float_format="%.17g")
    write_manifest(out, config, "train", {"data": args.data, "iterations": len(result.trace) - 1,
                                          "loss": repr(result.loss)})
    print(f"loss = {result.loss:.6f}")
    print(f"spectral_radius = {result.spectral_radius:.4f}")


def _evaluate(args, config: RunConfig) -> None:
    model = load_model(args.model)
    config = model.config
    context = build_context(config, germs=model.germs)
    train_set = load_dataset(args.train, Split.TRAIN)
    test_set = load_dataset(args.test, Split.TEST)
    evaluation = evaluate_model(context, model, train_set, test_set)
    out = Path(args.out)
    evaluation.report.write(out / "report.txt")
    evaluation.per_point.to_csv(out / "per_point.csv", index=False, float_format="%.17g")
    if args.pdf_point is not None:
        if not 0 <= args.pdf_point < len(test_set) or not 0 <= args.pdf_component < test_set.n_out:
            raise ConfigError("pdf point or component out of range", keys=["pdf-point", "pdf-component"])
        curves = pdf_curves(evaluation.test_outputs[args.pdf_point], evaluation.train_kde,
                            test_set.inputs[args.pdf_point], args.pdf_component, mode=config.kde_mode)
        curves.to_csv(out / "pdf.csv", index=False, float_format="%.17g")
    write_manifest(out, config, "evaluate", {"model": args.model, "train": args.train, "test": args.test})
    sys.stdout.write(evaluation.report.to_text())


def _verify(args, config: RunConfig) -> None:
    table = chaos_table(max_alpha=args.max_alpha)
    with pd.option_context("display.width", 160, "display.max_rows", None):
        print(table.to_string(index=False, float_format=lambda value: f"{value:.6e}"))
    print(f"max_abs_deviation = {table['abs_dev'].max():.3e}")
    print(f"max_odd_degree = {np.abs(table['odd_degree']).max():.3e}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        table.to_csv(out / "chaos.csv", index=False, float_format="%.17g")
        write_manifest(out, config, "verify chaos")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sgnn", description="Geometry-driven stochastic neural network on a torus")
    parser.add_argument("--config", default=None, help="Key-value config file (default: $SGNN_CONFIG)")
    parser.add_argument("--preset", default=None, help="Named parameter preset: reference, reference-nh10, smoke")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="Override one config key; repeatable")
    parser.add_argument("--log-level", default=None, help="Logging level (default: $SGNN_LOG_LEVEL or INFO)")
    commands = parser.add_subparsers(dest="command", required=True)

    mesh = commands.add_parser("mesh", help="Build the torus mesh and export it")
    mesh.add_argument("--mesh-out", required=True)
    mesh.set_defaults(handler=_mesh)

    field = commands.add_parser("field", help="Reduced latent field at the configured theta")
    field.add_argument("--spectrum-out", default=None)
    field.add_argument("--basis-out", default=None)
    field.add_argument("--field-out", default=None)
    field.add_argument("--out", default=None, help="Manifest directory (default: next to the first output)")
    field.set_defaults(handler=_field)

    architecture = commands.add_parser("architecture", help="Neurons and graph at the configured theta")
    architecture.add_argument("--neurons-out", required=True)
    architecture.add_argument("--edges-out", required=True)
    architecture.set_defaults(handler=_architecture)

    data = commands.add_parser("generate-data", help="Synthetic train/test datasets")
    data.add_argument("--n-train", type=int, default=3000)
    data.add_argument("--n-test", type=int, default=600)
    data.add_argument("--seed", type=int, default=None, help="Data seed (default: master_seed)")
    data.add_argument("--out", required=True)
    data.set_defaults(handler=_generate_data)

    fit = commands.add_parser("train", help="Trial grid then projected Adam")
    fit.add_argument("--data", required=True)
    fit.add_argument("--out", required=True)
    fit.set_defaults(handler=_train)

    evaluate = commands.add_parser("evaluate", help="Validation criteria of a trained model")
    evaluate.add_argument("--model", required=True)
    evaluate.add_argument("--train", required=True)
    evaluate.add_argument("--test", required=True)
    evaluate.add_argument("--out", required=True)
    evaluate.add_argument("--pdf-point", type=int, default=None)
    evaluate.add_argument("--pdf-component", type=int, default=0)
    evaluate.set_defaults(handler=_evaluate)

    verify = commands.add_parser("verify", help="Numerical self-checks")
    verify.add_argument("check", nargs="?", default="chaos", choices=["chaos"])
    verify.add_argument("--max-alpha", type=int, default=10)
    verify.add_argument("--out", default=None)
    verify.set_defaults(handler=_verify)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = (args.log_level or os.getenv("SGNN_LOG_LEVEL") or "INFO").upper()
    logging.basicConfig(level=level, format="[%(levelname)s] %(message)s")
    try:
        config = load_config(args.config, args.preset, args.overrides)
        args.handler(args, config)
    except ConfigError as exc:
        print(f"[ERROR] {exc}", file=sys.stderr)
        return 2
    except SgnnError as exc:
        print(f"[ERROR] {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
