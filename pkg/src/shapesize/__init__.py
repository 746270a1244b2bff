"""Shape and size index models for recurrent-event rate functions.

The rate of a counting process given covariates Z is modeled as a
product of a normalized shape function of time, driven by one linear
index of Z, and a scalar size factor driven by a second index. The
package estimates the shape direction by kernel pseudolikelihood, the
size direction from kernel-projected event counts, and quantifies
uncertainty with a subject-level bootstrap. A simulation module and a
CLI reproduce the benchmark study tables at desk scale.
"""

__version__ = "0.1.0"

from .data import (
    DataError,
    Dataset,
    Subject,
    TrimSpec,
    UNTRIMMED,
    load_dataset,
    save_dataset,
    validate,
)
from .inference import (
    ESTIMATORS,
    BootstrapResult,
    InferenceError,
    MonteCarloTable,
    bootstrap,
    bootstrap_multi,
    monte_carlo_study,
)
from .kernels import (
    KernelError,
    KernelSpec,
    kernel_eval,
    kernel_moments,
    scaled_kernel,
    shape_kernel,
    size_kernel,
)
from .reference import (
    ReferenceError,
    compare_to_reference,
    comparison_to_csv,
    load_benchmarks,
    reference_cells,
)
from .report import render_comparison_figure, render_table_figure
from .shape import (
    ShapeError,
    ShapeFit,
    conditional_loglik,
    count_identity_statistic,
    direction_angles,
    fit_shape,
    integrated_reverse_hazard,
    polyspherical_map,
    reverse_hazard,
    simplified_loglik,
)
from .simulate import (
    FRAILTIES,
    SCENARIOS,
    ScenarioError,
    ScenarioSpec,
    draw_event_times,
    frailty_draw,
    simulate_dataset,
    with_seed,
)
from .size import (
    ProjectedCounts,
    SizeError,
    SizeFitExp,
    SizeFitMre,
    cumulative_shape,
    dual_index_trim,
    fit_size_exp,
    fit_size_mre,
    project_counts,
)

__all__ = [
    "__version__",
    "DataError", "Dataset", "Subject", "TrimSpec", "UNTRIMMED",
    "load_dataset", "save_dataset", "validate",
    "ESTIMATORS", "BootstrapResult", "InferenceError", "MonteCarloTable",
    "bootstrap", "bootstrap_multi", "monte_carlo_study",
    "KernelError", "KernelSpec", "kernel_eval", "kernel_moments",
    "scaled_kernel", "shape_kernel", "size_kernel",
    "ReferenceError", "compare_to_reference", "comparison_to_csv",
    "load_benchmarks", "reference_cells",
    "render_comparison_figure", "render_table_figure",
    "ShapeError", "ShapeFit", "conditional_loglik", "count_identity_statistic",
    "direction_angles", "fit_shape", "integrated_reverse_hazard",
    "polyspherical_map", "reverse_hazard", "simplified_loglik",
    "FRAILTIES", "SCENARIOS", "ScenarioError", "ScenarioSpec",
    "draw_event_times", "frailty_draw", "simulate_dataset", "with_seed",
    "ProjectedCounts", "SizeError", "SizeFitExp", "SizeFitMre",
    "cumulative_shape", "dual_index_trim", "fit_size_exp", "fit_size_mre",
    "project_counts",
]
