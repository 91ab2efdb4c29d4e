"""Writes the bundled example graphs under graphs/."""
import json
import os

OUT = os.path.join(os.path.dirname(__file__), "..", "graphs")


def node(id, kind, inputs, **attrs):
    srcs = []
    for slot, src in enumerate(inputs):
        ref = {"input": src} if isinstance(src, str) else src
        srcs.append({"node": ref, "slot": slot})
    return {"id": id, "kind": kind, "attrs": attrs, "inputs": srcs}


def graph(level, inputs, nodes, outputs):
    return {
        "version": 1,
        "level": level,
        "inputs": [{"name": n, "shape": s} for n, s in inputs],
        "nodes": nodes,
        "outputs": outputs,
    }


def write(name, g):
    with open(os.path.join(OUT, name), "w") as f:
        json.dump(g, f, indent=2)
        f.write("\n")


write("softmax.json", graph("operator", [("x", [4, 16])], [node(0, "softmax", ["x"], axis=-1)], [0]))

# scores = Q K^T * c, P = softmax(scores), out = P V
write("softmax_matmul.json", graph(
    "operator",
    [("q", [16, 8]), ("k", [16, 8]), ("v", [16, 8])],
    [
        node(0, "transpose", ["k"], perm=[1, 0]),
        node(1, "matmul", ["q", 0]),
        node(2, "scale", [1], c=0.35),
        node(3, "softmax", [2], axis=-1),
        node(4, "matmul", [3, "v"]),
    ],
    [4],
))

# ReLU linear attention: out = (Q (K^T V)) / (Q (K^T 1))
write("attention_block.json", graph(
    "operator",
    [("x", [64, 16]), ("wq", [16, 16]), ("wk", [16, 16]), ("wv", [16, 16])],
    [
        node(0, "matmul", ["x", "wq"]),
        node(1, "relu", [0]),
        node(2, "matmul", ["x", "wk"]),
        node(3, "relu", [2]),
        node(4, "matmul", ["x", "wv"]),
        node(5, "transpose", [3], perm=[1, 0]),
        node(6, "matmul", [5, 4]),
        node(7, "matmul", [1, 6]),
        node(8, "reduce", [5], axis=1, aggregator="sum"),
        node(9, "reshape", [8], shape=[16, 1]),
        node(10, "matmul", [1, 9]),
        node(11, "reshape", [10], shape=[64]),
        node(12, "broadcast", [11], axis=1, size=16),
        node(13, "div", [7, 12]),
    ],
    [13],
))

write("instance_norm_relu_pad.json", graph(
    "operator",
    [("x", [1, 16, 32, 32])],
    [
        node(0, "instance_norm", ["x"], eps=1e-5),
        node(1, "relu", [0]),
        node(2, "pad", [1], low=[0, 0, 1, 1], high=[0, 0, 1, 1], value=0.0),
    ],
    [2],
))

# Residual add, layer norm and gelu over a batch-16 activation.
write("segformer_fragment.json", graph(
    "operator",
    [("x", [16, 128, 64]), ("y", [16, 128, 64])],
    [
        node(0, "add", ["x", "y"]),
        node(1, "layer_norm", [0], axis=-1, eps=1e-6),
        node(2, "gelu", [1]),
    ],
    [2],
))

# p1 feeds two outputs.
write("fanout.json", graph(
    "primitive",
    [("x", [1024])],
    [node(1, "exp", ["x"]), node(2, "relu", [1]), node(3, "neg", [1])],
    [2, 3],
))

write("diamond.json", graph(
    "primitive",
    [("x", [8])],
    [node(0, "exp", ["x"]), node(1, "relu", [0]), node(2, "neg", [0]), node(3, "add", [1, 2])],
    [3],
))
