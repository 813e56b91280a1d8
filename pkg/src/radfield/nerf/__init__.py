"""Neural radiance field: encoders, coarse/fine networks, compositing and training."""

from .encoding import EncodingConfig, freq_encode, hash_encode, hash_lookup
from .field import FieldParams, NetworkConfig, field_eval, init_field_params, query
from .render import RenderOutput, invert_cdf, merge_samples, pdf_sample, stratified_sample, volume_render
from .train import (
    NerfTrainConfig,
    RayBatch,
    TrainLog,
    nerf_export_pointcloud,
    nerf_grad,
    nerf_loss,
    nerf_render_image,
    nerf_train,
    prepare_samples,
)
