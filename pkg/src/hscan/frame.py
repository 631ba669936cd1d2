"""CAN 2.0 standard-format frames: layout, CRC-15, bit stuffing, arbitration.

Bits use bus polarity throughout: 0 is dominant (D), 1 is recessive (R).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DOMINANT = 0
RECESSIVE = 1

CRC15_POLY = 0x4599  # x^15+x^14+x^10+x^8+x^7+x^4+x^3+1 without the x^15 term
STUFF_RUN = 5

# Unstuffed field widths. With a 64-bit data field these add up to 110 bits.
SOF_BITS = 1
ARBITRATION_BITS = 12
CONTROL_BITS = 6
CRC_BITS = 15
CRC_DELIMITER_BITS = 1
ACK_BITS = 1
EOF_BITS = 7
IFS_BITS = 3
HEADER_BITS = SOF_BITS + ARBITRATION_BITS + CONTROL_BITS
TRAILER_BITS = CRC_DELIMITER_BITS + ACK_BITS + EOF_BITS + IFS_BITS
OVERHEAD_BITS = HEADER_BITS + CRC_BITS + TRAILER_BITS
MAX_STANDARD_DATA_BITS = 64


class FrameError(ValueError):
    """Invalid frame parameters."""


class StuffingError(ValueError):
    """Six identical consecutive bits inside a stuffed region."""

    def __init__(self, index: int):
        super().__init__(f"stuffing violation at bit {index}")
        self.index = index


def as_bits(bits) -> np.ndarray:
    """Coerce a sequence of 0/1 values to a uint8 bit array."""
    arr = np.asarray(bits, dtype=np.int64).ravel()
    if arr.size and not np.all((arr == 0) | (arr == 1)):
        raise ValueError("bit streams may only contain 0 and 1")
    return arr.astype(np.uint8)


def int_to_bits(value: int, width: int) -> np.ndarray:
    """MSB-first binary expansion of ``value``."""
    return np.array([(value >> (width - 1 - i)) & 1 for i in range(width)], dtype=np.uint8)


@dataclass(frozen=True)
class CanFrame:
    identifier: int
    data: np.ndarray
    extended_data_mode: bool = False

    @property
    def dlc_bits(self) -> int:
        return int(self.data.size)

    @property
    def dlc_code(self) -> int:
        # Classic CAN reads codes 9..15 as 8 bytes. Code 15 is used for the
        # full field and for extended lengths so the control field ends on a
        # recessive run and the data field starts with a fresh stuffing count.
        if self.dlc_bits >= MAX_STANDARD_DATA_BITS:
            return 0xF
        return self.dlc_bits // 8

    def header(self) -> np.ndarray:
        """SOF, arbitration field (identifier + RTR) and control field."""
        control = np.concatenate([[DOMINANT, DOMINANT], int_to_bits(self.dlc_code, 4)])
        return np.concatenate(
            [[DOMINANT], int_to_bits(self.identifier, 11), [DOMINANT], control]
        ).astype(np.uint8)

    def crc(self) -> int:
        return crc15(np.concatenate([self.header(), self.data]))

    def serialize(self) -> np.ndarray:
        """Unstuffed on-bus bit sequence, SOF through IFS."""
        return np.concatenate(
            [
                self.header(),
                self.data,
                int_to_bits(self.crc(), CRC_BITS),
                np.ones(TRAILER_BITS, dtype=np.uint8),
            ]
        ).astype(np.uint8)

    @property
    def stuffed_region_bits(self) -> int:
        return HEADER_BITS + self.dlc_bits + CRC_BITS


@dataclass(frozen=True)
class StuffedFrame:
    bits: np.ndarray
    stuff_positions: tuple[int, ...]
    data_start: int
    data_stop: int
    # (bit_index, is_dominant) for every bus bit of the stuffed data field
    dominant_schedule: tuple[tuple[int, bool], ...] = field(default=())

    @property
    def n_bits(self) -> int:
        return int(self.bits.size)


def build_frame(identifier: int, data, extended_data_mode: bool = False) -> CanFrame:
    if not 0 <= int(identifier) < 2**11:
        raise FrameError(f"identifier {identifier} outside 11-bit range")
    data = as_bits(data)
    if data.size % 8:
        raise FrameError(f"data length {data.size} is not a whole number of bytes")
    if data.size > MAX_STANDARD_DATA_BITS and not extended_data_mode:
        raise FrameError(
            f"data length {data.size} exceeds {MAX_STANDARD_DATA_BITS} bits; "
            "set extended_data_mode for longer fields"
        )
    return CanFrame(int(identifier), data, bool(extended_data_mode))


def all_dominant_frame(identifier: int, data_bits: int) -> CanFrame:
    """Frame whose data field is entirely dominant, the overlay operating mode."""
    return build_frame(
        identifier,
        np.zeros(data_bits, dtype=np.uint8),
        extended_data_mode=data_bits > MAX_STANDARD_DATA_BITS,
    )


def crc15(bits) -> int:
    """Bit-serial CAN CRC-15 with a zero-initialised register."""
    crc = 0
    for bit in as_bits(bits):
        feedback = ((crc >> 14) & 1) ^ int(bit)
        crc = (crc << 1) & 0x7FFF
        if feedback:
            crc ^= CRC15_POLY
    return crc


def _stuff(bits: np.ndarray) -> tuple[np.ndarray, list[int], list[int]]:
    """Returns stuffed bits, stuff positions and the output index of every input bit."""
    out: list[int] = []
    positions: list[int] = []
    where: list[int] = []
    run_bit, run_len = -1, 0
    for bit in bits.tolist():
        where.append(len(out))
        out.append(bit)
        if bit == run_bit:
            run_len += 1
        else:
            run_bit, run_len = bit, 1
        if run_len == STUFF_RUN:
            positions.append(len(out))
            run_bit, run_len = 1 - bit, 1
            out.append(run_bit)
    return np.array(out, dtype=np.uint8), positions, where


def stuff(bits) -> StuffedFrame:
    """Insert a complement bit after every run of five identical bits."""
    bits = as_bits(bits)
    out, positions, _ = _stuff(bits)
    return StuffedFrame(out, tuple(positions), 0, int(out.size))


def unstuff(bits) -> np.ndarray:
    bits = as_bits(bits)
    out: list[int] = []
    run_bit, run_len = -1, 0
    skip = False
    for i, bit in enumerate(bits.tolist()):
        if skip:
            if bit == run_bit:
                raise StuffingError(i)
            skip = False
            run_bit, run_len = bit, 1
            continue
        out.append(bit)
        if bit == run_bit:
            run_len += 1
        else:
            run_bit, run_len = bit, 1
        if run_len == STUFF_RUN:
            skip = True
    return np.array(out, dtype=np.uint8)


def stuff_frame(frame: CanFrame) -> StuffedFrame:
    """Stuff SOF through the CRC sequence and append the fixed-form trailer."""
    raw = frame.serialize()
    n_stuffed = frame.stuffed_region_bits
    region, positions, where = _stuff(raw[:n_stuffed])
    bits = np.concatenate([region, raw[n_stuffed:]]).astype(np.uint8)

    data_start = where[HEADER_BITS] if frame.dlc_bits else where[HEADER_BITS - 1] + 1
    last = HEADER_BITS + frame.dlc_bits - 1
    data_stop = where[last] + 1 if frame.dlc_bits else data_start
    # a stuff bit right after the last data bit still belongs to the data field
    if frame.dlc_bits and data_stop in positions:
        data_stop += 1
    schedule = tuple((i, bool(bits[i] == DOMINANT)) for i in range(data_start, data_stop))
    return StuffedFrame(bits, tuple(positions), int(data_start), int(data_stop), schedule)


def dominant_schedule(stuffed: StuffedFrame) -> list[tuple[int, int]]:
    """Dominant runs of the stuffed data field as ``(start_bit, n_bits)`` pairs.

    For an all-dominant field every run is at most five bits long and is
    followed by one recessive stuff bit.
    """
    windows: list[tuple[int, int]] = []
    start = None
    for index, dominant in stuffed.dominant_schedule:
        if dominant and start is None:
            start = index
        elif not dominant and start is not None:
            windows.append((start, index - start))
            start = None
    if start is not None:
        windows.append((start, stuffed.data_stop - start))
    return windows


def arbitrate(identifiers) -> int:
    """Winner of bitwise arbitration among simultaneously starting nodes."""
    ids = sorted(set(int(i) for i in identifiers))
    if not ids:
        raise ValueError("arbitration needs at least one identifier")
    contenders = ids
    for bit in range(10, -1, -1):
        # wired-AND bus: any dominant (0) transmitter forces the bus dominant
        bus = min((i >> bit) & 1 for i in contenders)
        contenders = [i for i in contenders if (i >> bit) & 1 == bus]
    return contenders[0]
