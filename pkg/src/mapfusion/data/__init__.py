from .dataset import (MANIFEST_NAME, Manifest, SampleRecord, build_dataset, compute_sample_maps,
                      load_manifest, load_sample, producer_labels, validate_manifest, write_manifest)
from .synth import (KINDS, ForgerySpec, gen_base_image, jpeg_round_trip, make_forgery, random_spec,
                    region_mask)
