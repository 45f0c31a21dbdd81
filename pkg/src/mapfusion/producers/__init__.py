from .fmap import FMAP_MAGIC, read_fmap, resize_bilinear, write_fmap
from .maps import (BUILTIN_PRODUCERS, FILL_VALUE, PRODUCERS, ZIGZAG_AC15, FeatureMap, adq1_map,
                   blk_map, block_dct8, block_idct8, builtin_maps, load_external_map, luminance,
                   noise_residual_map, stack_maps)
from .rasters import read_mask, read_rgb, write_gray_png, write_mask, write_rgb
