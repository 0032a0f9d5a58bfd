"""grasscat: a multivariate distribution for categorical and ordinal data.

Determinant-based probabilities over structured dummy encodings, constrained
maximum-likelihood fitting, a latent-factor model with biplot export, and the
companion continuous/binary mixed distribution.
"""

__version__ = "0.1.0"

from .errors import (
    ConditioningError,
    DataError,
    EnumerationCapError,
    GrasscatError,
    InvalidStateError,
    ParameterError,
    PositivityError,
    SchemaError,
)
from .schema import (
    DummyState,
    Record,
    VariableDecl,
    VariableKind,
    VariableSchema,
    decode_state,
    encode_record,
    enumerate_allowed_states,
    load_data_rows,
    load_schema,
)
from .grassmann import (
    GrassmannParams,
    IndexPartition,
    P0Report,
    check_p0,
    conditional_params,
    conditional_zero_moments,
    joint_probability,
    marginal_params,
    moments,
)
from .structure import (
    DominanceReport,
    StructuredParams,
    assemble_lambda,
    aux_loading_matrix,
    categorical_pmf,
    dominance_certificate,
    dominance_matrix,
    extended_lambda,
    middle_factor,
    ordinal_pmf,
    quasi_diagonal_blocks,
)
from .fit import (
    FitConfig,
    FitGradient,
    FitReport,
    StateCounts,
    empirical_moments,
    fit_grassmann,
    model_correlation,
    negative_log_likelihood,
    nll_gradient,
    state_counts,
)
from .factor import (
    BiplotData,
    CombinedLoadings,
    FactorFitConfig,
    FactorFitReport,
    FactorModel,
    bic_parameter_count,
    biplot_data,
    biplot_export,
    combined_loadings,
    fit_factor_model,
    fix_rotation,
    mixture_weights,
    observed_density,
    posterior,
    select_dimension_bic,
)
from .mixed import (
    MixedParams,
    MixedPartition,
    conditional_binary_given_continuous,
    mixed_conditional_density,
    mixed_joint_density,
    mixed_marginal_density,
)
from .oracle import (
    FullTable,
    OracleConditional,
    brute_force_table,
    oracle_conditional,
    oracle_marginal,
)
from .modelfile import ModelFile, load_model, save_model
