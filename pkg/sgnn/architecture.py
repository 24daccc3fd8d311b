"""
Germs, shared context and the per-hyperparameter pipeline

    theta -> latent field -> neurons -> graph -> weight realizations

Everything random is derived from the master seed through named
SeedSequence streams, so an architecture is a deterministic function of
(theta, germs).
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from sgnn.basis_fields import BasisMatrix, BiasBasis, build_anisotropy_bases, build_bias_basis, empty_basis
from sgnn.config import RunConfig
from sgnn.geometry import Mesh, SurfacePointSet, build_torus_mesh, sample_uniform_candidates
from sgnn.latent_field import AnisotropySpec, ReducedField, assemble_mass, build_fem_system, reduce, sample_field_vectors
from sgnn.models import GermPolicy, HyperparameterVector, ReductionMethod
from sgnn.neuron_process import NeuronSet, sample_neurons
from sgnn.solver import Partition, SolverSettings, build_partition, forward_dataset
from sgnn.topology import GeodesicTable, GraphTopology, build_topology, mesh_geodesics
from sgnn.weights import field_at_neurons, weight_realizations

logger = logging.getLogger(__name__)

# spawn-key streams under the master seed
ARCHITECTURE_STREAM = 0
REDRAW_STREAM = 1
WEIGHT_STREAM = 2
FIELD_SAMPLE_STREAM = 3
BASIS_STREAM = 4
EVALUATION_STREAM = 5

Selectors = Tuple[np.ndarray, np.ndarray]


def _stream(master_seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=key))


@dataclass(frozen=True)
class GermBundle:
    """
    The germs fixed before any optimization: the architecture draw eta_arch
    (length m), the candidate germs (three uniform vectors of length M) and
    the Poisson germ (length N). Weight germs are regenerated on demand from
    the master seed and a stream number.
    """
    master_seed: int
    policy: GermPolicy
    eta_arch: np.ndarray
    u_elem: np.ndarray
    u_a: np.ndarray
    u_b: np.ndarray
    u_poisson: np.ndarray

    @classmethod
    def draw(cls, master_seed: int, m: int, n_candidates: int, n_neurons: int,
             policy: GermPolicy = GermPolicy.COMMON_RANDOM_NUMBERS) -> "GermBundle":
        rng = _stream(master_seed, ARCHITECTURE_STREAM)
        eta_arch = rng.standard_normal(m)
        u_elem, u_a, u_b = rng.random((3, n_candidates))
        u_poisson = rng.random(n_neurons)
        return cls(master_seed=master_seed, policy=GermPolicy(policy), eta_arch=eta_arch,
                   u_elem=u_elem, u_a=u_a, u_b=u_b, u_poisson=u_poisson)

    @property
    def redraw_seed(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(self.master_seed, spawn_key=(REDRAW_STREAM,))

    def weight_germs(self, stream: int, n_sim: int, m: int) -> np.ndarray:
        """eta^l for l = 1..n_sim as rows, shape (n_sim, m)."""
        return _stream(self.master_seed, WEIGHT_STREAM, stream).standard_normal((n_sim, m))

    def evaluation_germs(self, n_sim: int, m: int) -> np.ndarray:
        return _stream(self.master_seed, EVALUATION_STREAM).standard_normal((n_sim, m))

    def field_sample_germs(self, n_nodes: int, n_samples: int) -> np.ndarray:
        return _stream(self.master_seed, FIELD_SAMPLE_STREAM).standard_normal((n_nodes, n_samples))


@dataclass(frozen=True)
class ModelContext:
    """Everything that does not depend on theta, built once per run."""
    config: RunConfig
    mesh: Mesh
    mass: sp.csr_matrix
    geodesics: GeodesicTable
    basis1: BasisMatrix
    basis2: BasisMatrix
    bias_basis: BiasBasis
    candidates: SurfacePointSet
    germs: GermBundle


def build_context(config: RunConfig, germs: Optional[GermBundle] = None) -> ModelContext:
    mesh = build_torus_mesh(config.torus())
    if germs is None:
        germs = GermBundle.draw(config.master_seed, config.m, config.candidate_count, config.n_neurons,
                                config.germ_policy)
    basis1, basis2 = build_anisotropy_bases(config.torus(), config.n_h, config.basis_kind,
                                            np.random.SeedSequence(config.master_seed, spawn_key=(BASIS_STREAM, 0)))
    bias_basis = build_bias_basis(config.n_hat, config.bias_size,
                                  np.random.SeedSequence(config.master_seed, spawn_key=(BASIS_STREAM, 1)))
    candidates = sample_uniform_candidates(mesh, config.candidate_count, germs.u_elem, germs.u_a, germs.u_b)
    logger.info("Built context: n_o=%d, n_elem=%d, M=%d candidates", mesh.n_nodes, mesh.n_elements, len(candidates))
    return ModelContext(config=config, mesh=mesh, mass=assemble_mass(mesh),
                        geodesics=mesh_geodesics(mesh, n_workers=config.n_workers),
                        basis1=basis1, basis2=basis2, bias_basis=bias_basis, candidates=candidates, germs=germs)


@dataclass(frozen=True)
class Architecture:
    theta_key: tuple
    field: ReducedField
    neurons: NeuronSet
    topology: GraphTopology
    partition: Partition

    @property
    def selectors(self) -> Selectors:
        return self.topology.j_in, self.topology.j_out

    def roles(self) -> np.ndarray:
        roles = np.full(self.neurons.n_neurons, "internal", dtype=object)
        roles[self.topology.j_in] = "input"
        roles[self.topology.j_out] = "output"
        return roles


def anisotropy_spec(theta: HyperparameterVector, context: ModelContext) -> AnisotropySpec:
    """theta with n_h = 0 ignores the context bases (trial stage)."""
    config = context.config
    if theta.n_h == 0:
        basis1 = basis2 = empty_basis(context.mesh.n_nodes)
    else:
        if theta.n_h != context.basis1.n_h:
            raise ValueError(f"theta has n_h={theta.n_h} but the bases have {context.basis1.n_h} columns")
        basis1, basis2 = context.basis1, context.basis2
    return AnisotropySpec(h1=theta.h1, h2=theta.h2, beta1=theta.beta1, beta2=theta.beta2,
                          basis1=basis1, basis2=basis2,
                          c_lower=(config.c_lower, config.c_lower), c_upper=(config.c_upper, config.c_upper))


def build_field(theta: HyperparameterVector, context: ModelContext) -> ReducedField:
    config = context.config
    spec = anisotropy_spec(theta, context)
    spec.validate()
    system = build_fem_system(context.mesh, spec, config.tau0, mass=context.mass)
    if config.reduction == ReductionMethod.DIRECT_EIG:
        return reduce(system, config.m, ReductionMethod.DIRECT_EIG)
    germs = context.germs.field_sample_germs(context.mesh.n_nodes, config.reduction_samples)
    samples = sample_field_vectors(system, config.reduction_samples, germs, config.mass_mode)
    return reduce(samples, config.m, ReductionMethod.SVD_OF_SAMPLES)


def build_architecture(theta: HyperparameterVector, context: ModelContext,
                       selectors: Optional[Selectors] = None) -> Architecture:
    """
    Field, neurons and graph for theta. zeta_s and the bias do not enter.
    Frozen selectors replace the field-based choice of J_in and J_out.
    """
    config = context.config
    field = build_field(theta, context)
    neurons = sample_neurons(context.candidates, field, context.mesh, config.n_neurons, context.germs.u_poisson,
                             redraw_seed=context.germs.redraw_seed, mass=context.mass)
    field_values = field_at_neurons(neurons, context.germs.eta_arch[:field.m])
    topology = build_topology(context.geodesics, neurons.points, context.mesh, field_values,
                              config.n_in, config.n_out, config.tau_prc, selectors=selectors)
    partition = build_partition(topology.j_in, topology.j_out, config.n_neurons)
    logger.debug("architecture h1=%.6g h2=%.6g edges=%d", theta.h1, theta.h2, topology.n_edges)
    return Architecture(theta_key=theta.architecture_key(), field=field, neurons=neurons,
                        topology=topology, partition=partition)


def bias_vector(theta: HyperparameterVector, context: ModelContext) -> np.ndarray:
    """b = [h] beta on the free neurons; an empty beta gives zero bias."""
    if theta.n_b == 0:
        return np.zeros(context.config.n_hat)
    if theta.n_b != context.bias_basis.n_b:
        raise ValueError(f"theta has n_b={theta.n_b} but the bias basis has {context.bias_basis.n_b} columns")
    return context.bias_basis.values @ theta.beta_bias


def realize_weights(architecture: Architecture, zeta_s: float, etas: np.ndarray, n_workers: int = 0) -> List[np.ndarray]:
    """Sparse weight matrices, one per row of etas."""
    realizations = weight_realizations(architecture.topology.kernel, architecture.topology.mask,
                                       architecture.neurons, zeta_s, etas, n_workers)
    return [realization.sparse for realization in realizations]


def network_outputs(theta: HyperparameterVector, context: ModelContext, inputs: np.ndarray, etas: np.ndarray,
                    architecture: Optional[Architecture] = None, selectors: Optional[Selectors] = None,
                    settings: Optional[SolverSettings] = None) -> np.ndarray:
    """Output ensembles of shape (n_points, n_out, n_sim)."""
    config = context.config
    if architecture is None:
        architecture = build_architecture(theta, context, selectors)
    realizations = realize_weights(architecture, theta.zeta_s, etas, config.n_workers)
    return forward_dataset(architecture.partition, bias_vector(theta, context), inputs, realizations,
                           settings or config.solver_settings())
