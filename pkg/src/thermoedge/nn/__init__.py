from .layers import (
    Activation,
    Conv2D,
    Dense,
    DepthwiseConv2D,
    Dropout,
    Flatten,
    Pool,
    Softmax,
    activation_forward,
    conv2d_forward,
    cross_entropy_loss,
    dense_forward,
    depthwise_conv2d_forward,
    dropout_forward,
    pool_forward,
    softmax,
)
from .model import (
    INPUT_POINT,
    ModelGraph,
    activation_points,
    backward,
    build_reference_model,
    expected_param_count,
    forward,
    model_backward,
    one_hot,
)
from .train import (
    TRAIN_PRESETS,
    AdamState,
    TrainConfig,
    adam_step,
    evaluate_accuracy,
    fit,
    predict_probs,
    train_model,
)
