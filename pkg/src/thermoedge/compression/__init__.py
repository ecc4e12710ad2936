from .container import (
    CompressedModel,
    ModelKind,
    check_quant_coverage,
    deserialize,
    from_bytes,
    model_size_bytes,
    serialize,
    to_bytes,
)
from .convert import (
    PQAT_PRESETS,
    MissingSpecError,
    PqatConfig,
    convert_dense,
    convert_half,
    convert_int8,
    input_point,
    post_training_quantize,
    pqat_pipeline,
)
from .pruning import SparsityMask, prune_finetune, prune_magnitude, tensor_sparsity
from .qat import (
    FakeQuantSpec,
    QuantSpecs,
    calibrate,
    fake_quant,
    fake_quant_grad,
    qat_finetune,
    representative_subset,
)
