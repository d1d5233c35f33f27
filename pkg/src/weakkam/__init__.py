"""Weak KAM numerics on flat tori: Lax-Oleinik evolution, barriers, gradient graphs."""

__version__ = "0.1.0"

from .exceptions import *  # noqa: F401,F403
from .grid import GridTorus, TimePoint, ValueField, interpolate, torus_distance, field_extrema
from .models import (LagrangianModel, MechanicalLagrangian, free_particle, pendulum,
                     forced_pendulum, asymptotic_pendulum, legendre_transform, el_flow,
                     monodromy_eigenvalues, estimate_critical_value, model_from_spec)
from .semigroup import (SolverParams, ConvergenceReport, lax_oleinik_step, lax_oleinik_apply,
                        renormalized_apply, new_lax_oleinik, shifted_new_lax_oleinik,
                        fit_decay_rate)
from .barrier import (ActionTable, BarrierTable, PeriodicSolution, finite_action,
                      action_potential, peierls_barrier, barrier_slices, limit_solution,
                      weak_kam_residual, extract_calibrated_curve)
from .graphs import (GradientGraph, MinimizerSet, build_gradient_graph, hausdorff_distance,
                     minimizer_set, graph_convergence, graph_diameter_bound)
from .kuramoto import (KuramotoConfig, TorusCertificate, coupling_schedule,
                       build_kuramoto_model, reduced_model, decay_norm_check, invariant_torus)
from .estimators import LaxOleinikTransformer, PeriodicWeakKAMSolution, ExponentialRateRegressor
