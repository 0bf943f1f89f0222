"""RDO encoder, bit-exact decoder, and per-CU decision records."""

from .bitstream import Bitstream  # noqa: F401
from .decoder import decode, decode_with_records  # noqa: F401
from .encoder import EncodeResult, encode_sequence, rdo_partition_search  # noqa: F401
from .entropy import entropy_code  # noqa: F401
from .records import CuRecord, CuRecordSet  # noqa: F401
