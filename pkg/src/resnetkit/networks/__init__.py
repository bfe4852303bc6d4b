"""Complete architectures: stage plans, builders, serialization, lowering."""

from .build import build, build_cifar, build_imagenet, build_video3d
from .lowering import (
    ExecutableModel,
    InitPolicy,
    NotExecutableError,
    branch_final_bn_ids,
    lower_to_executable,
)
from .plans import (
    CIFAR_BLOCKS,
    FAMILIES,
    IMAGENET_BLOCKS,
    VARIANT_TRAITS,
    VARIANTS,
    VIDEO_BLOCKS,
    StagePlan,
    VariantTraits,
    stage_plan,
)
from .serialize import (
    ArchFormatError,
    FORMAT_NAME,
    FORMAT_VERSION,
    deserialize,
    load_arch,
    save_arch,
    serialize,
)

__all__ = [
    "ArchFormatError",
    "CIFAR_BLOCKS",
    "ExecutableModel",
    "FAMILIES",
    "FORMAT_NAME",
    "FORMAT_VERSION",
    "IMAGENET_BLOCKS",
    "InitPolicy",
    "NotExecutableError",
    "StagePlan",
    "VARIANTS",
    "VARIANT_TRAITS",
    "VIDEO_BLOCKS",
    "VariantTraits",
    "branch_final_bn_ids",
    "build",
    "build_cifar",
    "build_imagenet",
    "build_video3d",
    "deserialize",
    "load_arch",
    "lower_to_executable",
    "save_arch",
    "serialize",
    "stage_plan",
]
