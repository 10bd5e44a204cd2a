"""Few-pixel black-box adversarial attacks via differential evolution."""

from .attack import (
    AttackOutcome,
    AttackSpec,
    PixelPerturbation,
    apply_perturbation,
    decode_perturbation,
    derive_nontargeted_from_targeted,
    filter_correctly_classified,
    make_spec,
    run_nontargeted_attack,
    run_targeted_attack,
)
from .campaign import CampaignConfig, run_campaign
from .de import DeConfig, EvolveResult, Gaussian, Uniform, evolve
from .imagery import ImageTensor, LabeledImage, load_cifar10_batch, load_manifest, load_png, resize_nearest, save_png
from .metrics import MetricsReport, RandomBaselineConfig, build_report, random_one_pixel_attack
from .oracle import (
    LinearSoftmaxOracle,
    OracleInfo,
    PocketCnnOracle,
    RemoteOracle,
    counting_wrapper,
    load_builtin_oracle,
)

__version__ = "0.1.0"
