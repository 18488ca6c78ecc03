"""Radiance-hint rendering and synthetic relighting dataset toolkit."""

from .imageio import HdrImage, read_pfm, write_pfm, read_mask_png, write_mask_png
from .geometry import (
    CameraSpec,
    DepthMap,
    ForegroundMask,
    PointGrid,
    ProxyMesh,
    backproject,
    triangulate,
    laplace_smooth,
    set_shading_normals,
    normalize_object,
    minimal_bounding_sphere,
    export_obj,
)
from .brdf import (
    DisneyParams,
    ProxyMaterial,
    hint_materials,
    sample_augmented_material,
)
from .lighting import (
    AreaLight,
    EnvMap,
    EnvironmentLight,
    LightingSpec,
    PointLight,
    PointLights,
    UniformAmbient,
    lighting_from_json,
    lighting_to_json,
    load_env_map,
    sample_lighting,
)
from .render import (
    RenderSettings,
    render,
    render_background,
    render_radiance_hints,
)
from .packing import (
    COLOR_PERMUTATIONS,
    ControlPacket,
    RadianceHintSet,
    composite,
    pack_direct,
    pack_multiplied,
    permute_color_channels,
    read_control_packet,
    write_control_packet,
)
from .shapes import OBJECT_KINDS, gen_procedural_object, sphere_mesh
from .dataset import (
    DatasetConfig,
    DatasetManifest,
    SampleRecord,
    ViewSpec,
    compose_training_pair,
    generate_dataset,
    materialize_pair,
    read_manifest,
    sample_viewpoints,
    write_manifest,
)

__version__ = "0.1.0"
