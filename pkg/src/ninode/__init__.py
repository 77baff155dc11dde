"""Negative-imaginary neural ODE controllers with verified stability certificates."""

from .controller import (
    LinearNiController,
    NinodeController,
    RegularityReport,
    build_linear_ni,
    build_ninode,
    validate_regularity,
)
from .errors import (
    CertificationError,
    ConfigError,
    ContractError,
    DivergenceError,
    InvalidInputError,
    NumericError,
)
from .linalg import SpectralNormState, cayley_orthogonal, spectral_norm
from .nets import (
    BiLipNet,
    LipschitzMlp,
    PlnetHamiltonian,
    SkewHead,
    SpdHead,
    bilip_constants,
    bilip_forward,
    plnet_grad,
    plnet_value,
    skew_head_eval,
    spd_head_eval,
)
from .plant import (
    ChainPotential,
    EtaReport,
    MechanicalPlant,
    PlantState,
    SpringChainParams,
    assemble_stiffness,
    estimate_eta,
    plant_dynamics,
    plant_hamiltonian,
    plant_output,
    spring_chain,
)
from .seeding import rng_stream
from .simulate import (
    ClosedLoopState,
    Trajectory,
    lyapunov_W,
    rollout,
    step,
    write_trajectory_csv,
)
from .tape import GradientTape, Node, grad
from .train import (
    HistoryRow,
    TrainConfig,
    quadratic_loss,
    quadratic_loss_node,
    train,
    write_loss_history_csv,
)
from .verify import (
    CheckRecord,
    VerificationReport,
    check_certified_nets,
    check_gradients,
    check_lyapunov,
    check_ni_controller,
    check_ni_plant,
    run_suite,
)

__version__ = "0.1.0"
