"""Binary statistical texture features for normalized iris strips.

Pipeline: rubber-sheet normalization -> masked-pixel zeroing -> learned
filter bank (PCA whitening + FastICA) -> boundary-padded filter responses
-> binary code image -> histogram or full-image feature -> subject-disjoint
classification. The boundary padding policy is swappable; see
`mbsif.encoder` for the TRADITIONAL (wrap) and MODIFIED (radial replicate)
presets.
"""

__version__ = "0.1.0"

from .imaging import BitMask, Circle, FloatImage, GrayImage, bilinear_sample, load_gray, save_gray
from .normalization import IrisAnnotation, NormalizedIris, apply_mask_zero, rubber_sheet
from .filter_learning import (FilterBank, PatchMatrix, WhiteningTransform, fast_ica,
                              fit_whitening, learn_filterbank, load_filterbank,
                              sample_patches, save_filterbank)
from .encoder import (MODIFIED, PRESETS, REPLICATE_FULL, TRADITIONAL, CodeImage,
                      FeatureVector, PaddingStrategy, ResponseStack, encode,
                      filter_responses, full_image_feature, histogram_feature, pad_image)
from .classifiers import (BoostModel, ForestModel, LabeledDataset, StumpModel,
                          fit_adaboost, fit_forest, fit_logitboost, load_model,
                          predict, predict_batch, save_model)
from .harness import (DatasetManifest, ExperimentConfig, GridSpec, ManifestEntry,
                      ResultRecord, SplitPlan, cross_validate, load_manifest,
                      make_split, run_config, run_grid)
from .synth import generate_corpus
