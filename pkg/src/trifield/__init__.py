"""trifield: joint self-supervised depth, light, and radiance fields.

A scene is stored as a learnable latent table; cross-attention heads decode
geometric query embeddings into volumetric radiance, single-query colors,
and single-query depth. Training couples the usual view-synthesis MSE with
a multi-view photometric warping loss, virtual-camera supervision of the
single-query heads, and depth-guided sample relocation for cheap
volumetric rendering.
"""

from .geometry import (
    Camera,
    EmbeddingConfig,
    RayBundle,
    camera_origin,
    fourier_encode,
    linspace_depths,
    make_ray_embedding,
    make_vol_embedding,
    pixel_rays,
    points_along_ray,
)
from .losses import (
    LossComponents,
    LossConfig,
    multi_context_photometric,
    photometric_loss,
    ssim,
    synthesize_view,
    total_loss,
    view_synthesis_loss,
    virtual_loss,
    warp_coordinates,
)
from .metrics import DepthMetrics, depth_metrics, median_scale, psnr, ssim_metric
from .model import ModelConfig, SceneModel
from .optim import AdamWState, adamw_step
from .render import (
    CompositeResult,
    RenderResult,
    SamplingConfig,
    composite,
    dfg_sample_depths,
    render_light_depth,
    render_volumetric,
)
from .sampling import (
    StrideSpec,
    SubView,
    VirtualCameraSpec,
    sample_virtual_camera,
    strided_subview,
)
from .scenes import (
    BoxSceneConfig,
    Frame,
    Scene,
    WallTexture,
    generate_box_scene,
    load_scene,
    ray_box_depth,
    save_scene,
)
from .tensor import (
    Graph,
    Tensor,
    finite_difference,
    gradient,
    no_grad,
    reset_graph,
)
from .trainer import (
    ABLATION_TAGS,
    FitResult,
    NumericalError,
    ScheduleState,
    TrainConfig,
    ablation_variant,
    build_model,
    fit,
    schedule_state,
    training_step,
)

__version__ = "0.1.0"
