"""The run manifest: one JSON document holding everything needed to reproduce
a run. Every embed/serve invocation writes its manifest next to its outputs;
feeding the same file back through --config reproduces the run bit for bit
(deterministic mode, same package version).
"""

import json
from dataclasses import asdict, dataclass, field

from .engine import EmbeddingConfig

MANIFEST_VERSION = 1


@dataclass
class RunManifest:
    embedding: dict = field(default_factory=lambda: EmbeddingConfig().to_dict())
    dataset: dict = field(default_factory=dict)  # path, format, label_column, labels_path
    graph: dict = field(default_factory=dict)  # k, metric, refine_iters, cache
    metrics: dict = field(default_factory=dict)  # k_max, nn_max, sample_pairs
    output_dir: str = "."
    threads: int = 1
    deterministic: bool = True
    parameter_timeline: list = field(default_factory=list)  # (iteration, key, value)
    version: int = MANIFEST_VERSION

    def config(self):
        return EmbeddingConfig.from_dict(self.embedding)

    def to_json(self, indent=2):
        return json.dumps(asdict(self), indent=indent)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())
            fh.write("\n")

    @classmethod
    def from_json(cls, payload):
        raw = json.loads(payload)
        raw.pop("version", None)
        manifest = cls(**raw)
        manifest.version = MANIFEST_VERSION
        return manifest

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(fh.read())
