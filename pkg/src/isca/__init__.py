"""Block-wise subspace learning with an SSIM objective (ISCA), its kernel
variant, PCA baselines and a distortion-recognition pipeline."""

from .admm import IscaModel, TrainConfig, project, reconstruct, train
from .blocks import BlockSet, load_image, partition, reassemble, save_image
from .kernel import KernelConfig, KernelIscaModel, project_kernel, train_kernel
from .ssim import SsimConstants, mean_block_ssim, mse, ssim, ssim_distance

__version__ = "0.1.0"
