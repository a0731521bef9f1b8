"""Multi-modal catalog browsing engine.

Simulates multi-modal dialog sessions over a synthetic fashion catalog,
learns a joint text/image embedding with a correlational autoencoder,
trains a GMM-sampling browsing agent on top of it, and serves live
interactive sessions over HTTP.
"""

__version__ = "0.1.0"

from .agent import (
    AgentHyper,
    AgentParams,
    build_training_set,
    context_mean,
    cosine_loss,
    decode_samples,
    evaluate,
    forward_round,
    gmm_head,
    gumbel_softmax,
    sample_reparam,
    train_agent,
)
from .catalog import (
    AttributeIndex,
    EncodedCatalog,
    EncodedProduct,
    FeatureStats,
    Product,
    VocabConfig,
    Vocabulary,
    build_vocabulary,
    encode_image,
    encode_text,
    generate_catalog,
    load_catalog,
    save_catalog,
    search,
)
from .corrnet import (
    CorrNetParams,
    CorrNetTrainConfig,
    ProjectionSpace,
    corr_term,
    corrnet_loss,
    cross_modal_neighbors,
    project,
    reconstruct,
    train_corrnet,
)
from .errors import MMBrowseError
from .numerics import (
    cosine_similarity,
    finite_difference_gradient,
    gumbel_noise,
    sigmoid,
    softmax,
    stream_rng,
)
from .simulator import (
    DialogContext,
    DialogSession,
    DialogSimulator,
    FsaConfig,
    explore_cluster,
    generate_dataset,
    knn,
    respond_click,
    respond_text,
    step_fsa,
)
