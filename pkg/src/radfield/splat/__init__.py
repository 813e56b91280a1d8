"""3D Gaussian splatting: primitives, projection, tile rasterization, densification and training."""

from .densify import DensifyConfig, GradStats, densify_and_prune
from .gaussians import PARAM_GROUPS, Gaussians, covariance_3d, init_from_points, quat_to_rotation
from .loss import SplatGradients, render_splats, splat_grad, splat_loss
from .ply import parse_ply, parse_splat_ply, pointcloud_export, splat_export
from .project import Projections, project_gaussians
from .raster import RasterResult, TileGrid, bin_and_sort, rasterize, rasterize_naive
from .sh import sh_basis, sh_to_color
from .train import DEFAULT_LR, SplatTrainConfig, SplatTrainLog, splat_render_image, splat_train
