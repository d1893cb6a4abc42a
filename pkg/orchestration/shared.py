import dataclasses
from typing import Any, Optional, Type

import numpy as np
import temporalio.converter
from temporalio.api.common.v1 import Payload
from temporalio.converter import (
    CompositePayloadConverter,
    DefaultPayloadConverter,
    EncodingPayloadConverter,
)

from weightspace.core import LabeledSample, MlpSpec
from weightspace.store import decode_samples, encode_samples

TASK_QUEUE = "weightspace-task-queue"


def _join(values: Any) -> bytes:
    return ",".join(str(v) for v in values).encode()


def _split(raw: bytes) -> list:
    return raw.decode().split(",")


class SampleEncodingPayloadConverter(EncodingPayloadConverter):
    """Carries a :class:`LabeledSample` as a one-record WSDS blob.

    Samples hold no activations. The blob stores the tensors but neither the
    layer widths nor the soft label, so ``dims`` and ``label`` travel in the
    payload metadata.
    """

    @property
    def encoding(self) -> str:
        return "binary/weightspace-sample"

    def to_payload(self, value: Any) -> Optional[Payload]:
        if not isinstance(value, LabeledSample):
            return None
        return Payload(
            metadata={
                "encoding": self.encoding.encode(),
                "dims": _join(value.v.dims),
                # repr round-trips every float64 exactly
                "label": _join(repr(float(x)) for x in value.label),
            },
            data=encode_samples([value]),
        )

    def from_payload(self, payload: Payload, type_hint: Optional[Type] = None) -> Any:
        assert not type_hint or type_hint is LabeledSample
        dims = [int(d) for d in _split(payload.metadata["dims"])]
        label = np.array([float(x) for x in _split(payload.metadata["label"])])
        # Decoding only needs the layer shapes.
        shapes = MlpSpec.relu(dims)
        ((object_id, view_id, _, v),) = decode_samples(payload.data, shapes, label.size)
        return LabeledSample(v, label, object_id, view_id)


class WeightSpacePayloadConverter(CompositePayloadConverter):
    def __init__(self) -> None:
        super().__init__(
            SampleEncodingPayloadConverter(),
            *DefaultPayloadConverter.default_encoding_payload_converters
        )


weightspace_data_converter = dataclasses.replace(
    temporalio.converter.default(),
    payload_converter_class=WeightSpacePayloadConverter,
)
