"""Fourier epicycle descriptors of closed outlines.

An outline sampled at M points p_j = x_j + i*y_j is expanded as

    c_k = (1/M) * sum_j p_j * exp(-2*pi*i*k*j/M)

and kept for k = 0 and k = +-1..+-n. Term k rotates at angular velocity
2*pi*k per traversal. With n = 100 the flattened descriptor holds
2 + 4*100 = 402 reals.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, InputError
from .shape_io import Contour

N_HARMONICS = 100
TRUNCATION_ORDERS = ("amplitude", "frequency")


def term_order(n_harmonics: int) -> np.ndarray:
    """Frequencies in descriptor order: 1, -1, 2, -2, ..., n, -n."""
    k = np.arange(1, n_harmonics + 1)
    return np.column_stack([k, -k]).ravel()


@dataclass
class FourierCoefficients:
    c0: complex
    terms: np.ndarray  # complex, aligned with term_order(n_harmonics)
    n_samples: int

    def __post_init__(self):
        self.terms = np.asarray(self.terms, dtype=np.complex128)
        if self.terms.ndim != 1 or len(self.terms) % 2 or len(self.terms) == 0:
            raise ContractError("terms must hold an even, nonzero number of coefficients")
        self.c0 = complex(self.c0)

    @property
    def n_harmonics(self) -> int:
        return len(self.terms) // 2

    @property
    def freqs(self) -> np.ndarray:
        return term_order(self.n_harmonics)

    @property
    def angular_velocities(self) -> np.ndarray:
        return 2 * np.pi * self.freqs

    def coefficient(self, k: int) -> complex:
        if k == 0:
            return self.c0
        if not 1 <= abs(k) <= self.n_harmonics:
            raise ContractError(f"frequency {k} outside +-{self.n_harmonics}")
        return complex(self.terms[2 * (abs(k) - 1) + (k < 0)])


@dataclass
class ReconstructionReport:
    K: int
    rms_error: float
    max_error: float

    def suspect(self, max_error_threshold: float) -> bool:
        return self.max_error > max_error_threshold


def contour_to_complex(c: Contour) -> np.ndarray:
    return c.points[:, 0] + 1j * c.points[:, 1]


def dft_coefficients(signal, n_harmonics: int = N_HARMONICS) -> FourierCoefficients:
    z = np.asarray(signal, dtype=np.complex128)
    m = len(z)
    if m <= 2 * n_harmonics:
        raise ContractError(f"{m} samples cannot resolve {n_harmonics} harmonics (need M > {2 * n_harmonics})")
    spectrum = np.fft.fft(z) / m
    return FourierCoefficients(spectrum[0], spectrum[term_order(n_harmonics) % m], m)


def contour_coefficients(c: Contour, n_harmonics: int = N_HARMONICS) -> FourierCoefficients:
    return dft_coefficients(contour_to_complex(c), n_harmonics)


def assemble_descriptor(fc: FourierCoefficients) -> np.ndarray:
    out = np.empty(2 + 2 * len(fc.terms))
    out[0], out[1] = fc.c0.real, fc.c0.imag
    out[2::2] = fc.terms.real
    out[3::2] = fc.terms.imag
    return out


def parse_descriptor(values, n_samples: int = 0) -> FourierCoefficients:
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or (len(v) - 2) % 4 or len(v) < 6:
        raise ContractError(f"descriptor length {len(v)} is not 2 + 4*n")
    return FourierCoefficients(complex(v[0], v[1]), v[2::2] + 1j * v[3::2], n_samples)


def evaluate_series(c0: complex, freqs, coeffs, samples: int) -> np.ndarray:
    """p(t) = c0 + sum c_k exp(2*pi*i*k*t) at t = j/samples."""
    t = np.arange(samples) / samples
    freqs = np.asarray(freqs)
    coeffs = np.asarray(coeffs, dtype=np.complex128)
    if len(freqs) == 0:
        return np.full(samples, complex(c0))
    return c0 + np.exp(2j * np.pi * np.outer(t, freqs)) @ coeffs


def select_terms(fc: FourierCoefficients, K: int, order: str = "amplitude") -> np.ndarray:
    """Indices into fc.terms of the K terms kept for reconstruction.

    Amplitude order keeps the K largest |c_k|, ties going to smaller |k| and
    then to positive k; frequency order keeps k = 1, -1, 2, -2, ... .
    """
    if not 1 <= K <= len(fc.terms):
        raise ContractError(f"K must be in 1..{len(fc.terms)}, got {K}")
    if order == "frequency":
        return np.arange(K)
    if order != "amplitude":
        raise ContractError(f"unknown truncation order {order!r}")
    # descriptor order already encodes the tie rule; a stable sort keeps it
    return np.argsort(-np.abs(fc.terms), kind="stable")[:K]


def reconstruct(fc: FourierCoefficients, K: int, samples: int, order: str = "amplitude") -> Contour:
    keep = select_terms(fc, K, order)
    z = evaluate_series(fc.c0, fc.freqs[keep], fc.terms[keep], samples)
    return Contour(np.column_stack([z.real, z.imag]))


def reconstruction_error(original: Contour, fc: FourierCoefficients, K: int,
                         order: str = "amplitude") -> ReconstructionReport:
    if fc.n_samples and len(original) != fc.n_samples:
        raise ContractError(f"contour has {len(original)} points, coefficients came from {fc.n_samples}")
    rec = reconstruct(fc, K, len(original), order)
    err = np.hypot(*(rec.points - original.points).T)
    return ReconstructionReport(K, float(np.sqrt(np.mean(err ** 2))), float(err.max()))


def write_descriptor_csv(path, ids, species, rows) -> None:
    rows = np.asarray(rows, dtype=np.float64)
    header = ["specimen_id", "species_id"] + [f"v{i}" for i in range(rows.shape[1])]
    lines = [",".join(header)]
    for sid, sp, row in zip(ids, species, rows.tolist()):
        lines.append(",".join([str(sid), str(sp)] + [repr(v) for v in row]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_descriptor_csv(path, prefix: str = "v") -> tuple[list[str], list[str], np.ndarray]:
    """Also reads embedding CSVs (prefix "e"), which share the layout."""
    try:
        lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    except OSError as exc:
        raise InputError(f"{path}: unreadable ({exc.strerror})") from None
    if not lines:
        raise InputError(f"{path}: empty file")
    header = lines[0].split(",")
    if header[:2] != ["specimen_id", "species_id"] or not all(
            h == f"{prefix}{i}" for i, h in enumerate(header[2:])):
        raise InputError(f"{path}: unexpected header")
    ids, species, rows = [], [], []
    for n, ln in enumerate(lines[1:], start=2):
        parts = ln.split(",")
        if len(parts) != len(header):
            raise InputError(f"{path}:{n}: expected {len(header)} fields, got {len(parts)}")
        ids.append(parts[0])
        species.append(parts[1])
        try:
            rows.append([float(v) for v in parts[2:]])
        except ValueError:
            raise InputError(f"{path}:{n}: non-numeric value") from None
    return ids, species, np.array(rows, dtype=np.float64).reshape(len(rows), len(header) - 2)


# packed variant: b"FDSC", u32 record count, then count * dim little-endian f64
def write_descriptor_binary(path, rows) -> None:
    rows = np.ascontiguousarray(rows, dtype="<f8")
    Path(path).write_bytes(b"FDSC" + struct.pack("<I", len(rows)) + rows.tobytes())


def read_descriptor_binary(path, dim: int | None = None) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != b"FDSC" or len(data) < 8:
        raise InputError(f"{path}: not a packed descriptor file")
    (count,) = struct.unpack_from("<I", data, 4)
    n_values = (len(data) - 8) // 8
    if (len(data) - 8) % 8 or (count and n_values % count):
        raise InputError(f"{path}: size does not match record count {count}")
    dim = dim or (n_values // count if count else 0)
    if count * dim != n_values:
        raise InputError(f"{path}: expected {count} x {dim} values, found {n_values}")
    return np.frombuffer(data, dtype="<f8", offset=8).astype(np.float64).reshape(count, dim)
