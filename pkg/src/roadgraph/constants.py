"""Constants for the roadgraph package."""

# Vertex extraction
DEFAULT_THRESHOLD = 0.5
DEFAULT_NMS_RADIUS = 8.0
DEFAULT_NEIGHBOR_RADIUS = 64.0
DEFAULT_MAX_NEIGHBORS = 16
DEFAULT_EDGE_THRESHOLD = 0.5
DEFAULT_PERTURB_SIGMA = 1.0
DEFAULT_SOURCES_PER_PATCH = 512

# Intersection vertices are joined with this score offset so that they
# outrank every road vertex (probabilities never exceed 1).
INTERSECTION_SCORE_OFFSET = 2.0

# Path-search topology: road pixels below this probability are impassable
# and the probability floor of the per-pixel cost.
ASTAR_ROAD_FLOOR = 0.05

# Label rasterization, in pixels
ROAD_HALF_WIDTH = 1.5
INTERSECTION_RADIUS = 3.0

# Feature maps
FEATURE_SCALE = 16
SYNTH_FEATURE_DIM = 32
# Seed of the analytic encoder projections, shared by every scene and window.
ENCODER_SEED = 0

# Topology decoder
NUM_HEADS = 4
NUM_LAYERS = 3
FFN_MULTIPLIER = 4
LEARNING_RATE = 1e-3
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
PROB_CLAMP = 1e-7

# Sliding windows
DEFAULT_WINDOW_SIZE = 512

# Metrics
TOPO_MATCH_RADIUS = 8.0
TOPO_PROPAGATION_RADIUS = 300.0
TOPO_SAMPLE_INTERVAL = 5.0
TOPO_SEED_COUNT = 500
APLS_SNAP_RADIUS = 4.0
APLS_PAIR_COUNT = 500

# Synthetic scenes
SYNTH_MIN_EXTENT = 256
SYNTH_MERGE_RADIUS = 2.0
SYNTH_BLUR_SIGMA = 3.0

# Tensor files
TENSOR_MAGIC = b"RGT1"
BUNDLE_MAGIC = b"RGTB"
DTYPE_CODES = {0: "<f4", 1: "<f8", 2: "<i8", 3: "u1"}

# Dataset layout
GRAPH_FILE = "graph.json"
MASK_FILE = "mask.rgt"
META_FILE = "meta.txt"
MASK_DIR = "masks"
FEATURE_DIR = "feats"
WINDOW_FILE_PATTERN = "win_{ix}_{iy}.rgt"
