"""Verifiable training transcripts for small neural networks.

Train a model while recording a transcript (batch commitments, periodic
weight checkpoints, metadata), then let a verifier replay only the largest
recorded updates to decide whether the training actually happened. The
spoof module collects the ways someone might fake such a transcript and
the bench module measures why full re-execution would not work instead.
"""

from .bench import (
    cost_curve,
    epsilon_repr,
    first_fail_step,
    k_sweep,
    ks_steps,
    lr_sweep,
    read_csv,
    reference_distance,
    storage_curve,
    write_csv,
)
from .config import (
    AUTO_NOISE_REL,
    DataConfig,
    ModelConfig,
    RunConfig,
    TrainConfig,
    VerifyConfig,
    auto_sigma,
    build_arch,
    build_dataset,
    build_hyper,
    build_noise,
    build_verifier_config,
    config_from_dict,
    config_to_dict,
    load_config,
    save_config,
)
from .data import Dataset, get_batches, load_csv_dataset, make_synthetic_dataset
from .ksinit import (
    InitCheck,
    LayerKsResult,
    check_initialization,
    init_cdf,
    kolmogorov_sf,
    ks_pvalue,
    ks_statistic,
    layer_test,
)
from .metrics import METRIC_NAMES, distance, update_magnitude
from .model import (
    ACTIVATIONS,
    INIT_STRATEGIES,
    LOSSES,
    ModelArch,
    WeightVector,
    accuracy,
    batch_loss,
    forward,
    gradient,
    init_weights,
    loss_and_grad,
    predict,
)
from .proof import (
    CHECKPOINT_DTYPES,
    ProofMeta,
    StructuralError,
    TrainingProof,
    checkpoint_count,
    create_proof,
    expected_transfer,
    hash_batch,
    measured_checkpoint_payload,
    proof_size_bytes,
    read_proof,
    write_proof,
)
from .sealing import (
    DecryptionError,
    Identity,
    SealError,
    SealedProof,
    SignatureError,
    generate_identity,
    load_identity,
    load_public,
    read_sealed,
    save_identity,
    save_public,
    seal,
    sign_detached,
    unseal,
    verify_detached,
    write_sealed,
)
from .spoof import (
    ATTACKS,
    InverseStepResult,
    SpoofReport,
    concat_spoof,
    directed_loss_and_grad,
    directed_regularizer_spoof,
    inverse_gradient_spoof,
    invert_update,
    retrain_spoof,
)
from .training import (
    OPTIMIZERS,
    CallCounter,
    Hyperparams,
    NoiseModel,
    NO_NOISE,
    batch_stream_seed,
    noise_stream_rng,
    run_sgd,
    sgd_step,
)
from .verify import (
    FAIL_REASONS,
    ProofLedger,
    ProverSetup,
    SegmentReport,
    VerificationConfig,
    VerificationResult,
    VsrEstimate,
    calibrate_delta,
    noise_allowance,
    plan_checks,
    proof_segments,
    replay_segment,
    segment_magnitude,
    verification_cost,
    verify_chain,
    verify_sealed,
    verify_transcript,
    vsr_estimate,
    wilson_interval,
)

__version__ = "0.1.0"
