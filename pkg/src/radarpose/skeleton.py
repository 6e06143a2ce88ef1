"""The 25-joint skeleton: naming, prediction order, and bone tree.

The fixed joint order below is the depth-camera convention the rest of
the package assumes everywhere a (25, 3) array appears. The decoder
predicts key-points in exactly this order.
"""

JOINT_NAMES = [
    "SpineBase", "SpineMid", "Neck", "Head",
    "ShoulderLeft", "ElbowLeft", "WristLeft", "HandLeft",
    "ShoulderRight", "ElbowRight", "WristRight", "HandRight",
    "HipLeft", "KneeLeft", "AnkleLeft", "FootLeft",
    "HipRight", "KneeRight", "AnkleRight", "FootRight",
    "SpineShoulder",
    "HandTipLeft", "ThumbLeft", "HandTipRight", "ThumbRight",
]

JOINT_INDEX = {name: i for i, name in enumerate(JOINT_NAMES)}

# Parent -> child bone edges; 24 edges spanning the 25 joints.
SKELETON_EDGES = [
    ("SpineBase", "SpineMid"),
    ("SpineMid", "SpineShoulder"),
    ("SpineShoulder", "Neck"),
    ("Neck", "Head"),
    ("SpineShoulder", "ShoulderLeft"),
    ("ShoulderLeft", "ElbowLeft"),
    ("ElbowLeft", "WristLeft"),
    ("WristLeft", "HandLeft"),
    ("HandLeft", "HandTipLeft"),
    ("WristLeft", "ThumbLeft"),
    ("SpineShoulder", "ShoulderRight"),
    ("ShoulderRight", "ElbowRight"),
    ("ElbowRight", "WristRight"),
    ("WristRight", "HandRight"),
    ("HandRight", "HandTipRight"),
    ("WristRight", "ThumbRight"),
    ("SpineBase", "HipLeft"),
    ("HipLeft", "KneeLeft"),
    ("KneeLeft", "AnkleLeft"),
    ("AnkleLeft", "FootLeft"),
    ("SpineBase", "HipRight"),
    ("HipRight", "KneeRight"),
    ("KneeRight", "AnkleRight"),
    ("AnkleRight", "FootRight"),
]

SKELETON_EDGE_INDICES = [(JOINT_INDEX[a], JOINT_INDEX[b]) for a, b in SKELETON_EDGES]

# The eight hand-region joints whose radar cross-section is too small to
# localize reliably; the 17-joint metric excludes exactly these.
OUTLIER_JOINT_NAMES = [
    "WristLeft", "WristRight",
    "HandLeft", "HandRight",
    "HandTipLeft", "HandTipRight",
    "ThumbLeft", "ThumbRight",
]

OUTLIER_JOINT_INDICES = [JOINT_INDEX[name] for name in OUTLIER_JOINT_NAMES]
