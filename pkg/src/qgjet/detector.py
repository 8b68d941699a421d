"""Detector-grid geometry: hit binning, tower upsampling, jet-window crops.

The full-detector view is a 3-channel image on a fine 280x360 (eta, phi)
grid covering |eta| < 3 and the full azimuth. TRACK and ECAL deposits are
binned at fine resolution; HCAL deposits live on the native 56x72 tower
grid and are upsampled by 5x5 block replication. A jet window is a 125x125
crop centered on the hottest HCAL tower near the jet axis; columns wrap in
phi, rows never pad in eta.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

TWO_PI = 2.0 * math.pi
WINDOW_SIZE = 125
WINDOW_HALF = 62
NEIGHBORHOOD_HALF = 4  # 9x9 towers scanned around the jet centroid tower

GLUON = 0
QUARK = 1


class Channel(IntEnum):
    TRACK = 0
    ECAL = 1
    HCAL = 2


class EtaOutOfRange(ValueError):
    """Window center too close to the eta edge for a full 125-pixel crop."""


@dataclass(frozen=True)
class DetectorHit:
    eta: float
    phi: float      # radians in (-pi, pi]
    value: float    # GeV; the track channel carries pT
    channel: Channel


@dataclass(frozen=True)
class GridSpec:
    n_eta: int = 280
    n_phi: int = 360
    eta_min: float = -3.0
    eta_max: float = 3.0
    hcal_factor: int = 5

    def __post_init__(self):
        if self.n_eta % self.hcal_factor or self.n_phi % self.hcal_factor:
            raise ValueError("fine grid must be a multiple of the tower grid")

    @property
    def n_eta_hcal(self) -> int:
        return self.n_eta // self.hcal_factor

    @property
    def n_phi_hcal(self) -> int:
        return self.n_phi // self.hcal_factor


@dataclass
class FullDetectorImage:
    data: np.ndarray  # float32 [3, n_eta, n_phi]
    spec: GridSpec = field(default_factory=GridSpec)
    n_dropped: int = 0

    def hcal_native(self) -> np.ndarray:
        """Tower values [56, 72]; valid because the HCAL channel is
        block-constant after upsampling."""
        f = self.spec.hcal_factor
        return self.data[Channel.HCAL, ::f, ::f]


@dataclass
class JetWindow:
    data: np.ndarray  # float32 [3, 125, 125]
    center_row: int | None = None
    center_col: int | None = None
    label: int | None = None  # QUARK=1, GLUON=0


def eta_from_theta(theta: float) -> float:
    """Pseudorapidity -ln(tan(theta/2)) for polar angle theta in (0, pi)."""
    if not 0.0 < theta < math.pi:
        raise ValueError(f"theta must lie in (0, pi), got {theta}")
    return -math.log(math.tan(0.5 * theta))


def pt_from_components(px: float, py: float) -> float:
    """Transverse momentum sqrt(px^2 + py^2)."""
    return math.hypot(px, py)


def wrap_phi(phi):
    """Map any angle into [-pi, pi); the +pi boundary folds onto -pi."""
    return phi - TWO_PI * np.floor((phi + math.pi) / TWO_PI)


def _eta_bin(eta, n_eta: int, eta_min: float, eta_max: float):
    idx = np.floor((eta - eta_min) * (n_eta / (eta_max - eta_min))).astype(np.int64)
    return np.minimum(idx, n_eta - 1)


def _phi_bin(phi, n_phi: int):
    idx = np.floor((wrap_phi(phi) + math.pi) * (n_phi / TWO_PI)).astype(np.int64)
    return np.minimum(idx, n_phi - 1)


def bin_hits(hits, spec: GridSpec = GridSpec()) -> FullDetectorImage:
    """Sum hits into the fine grid; HCAL goes through the native tower grid.

    Hits with |eta| >= eta_max are dropped (counted in ``n_dropped``), never
    an error. Cells receiving several hits accumulate their sum.
    """
    eta = np.array([h.eta for h in hits], dtype=np.float64)
    phi = np.array([h.phi for h in hits], dtype=np.float64)
    val = np.array([h.value for h in hits], dtype=np.float64)
    cha = np.array([int(h.channel) for h in hits], dtype=np.int64)

    in_range = np.abs(eta) < spec.eta_max if len(hits) else np.zeros(0, dtype=bool)
    n_dropped = int(len(hits) - in_range.sum())
    eta, phi, val, cha = eta[in_range], phi[in_range], val[in_range], cha[in_range]

    image = np.zeros((3, spec.n_eta, spec.n_phi), dtype=np.float64)
    for channel in (Channel.TRACK, Channel.ECAL):
        sel = cha == int(channel)
        rows = _eta_bin(eta[sel], spec.n_eta, spec.eta_min, spec.eta_max)
        cols = _phi_bin(phi[sel], spec.n_phi)
        np.add.at(image[channel], (rows, cols), val[sel])

    sel = cha == int(Channel.HCAL)
    native = np.zeros((spec.n_eta_hcal, spec.n_phi_hcal), dtype=np.float64)
    rows = _eta_bin(eta[sel], spec.n_eta_hcal, spec.eta_min, spec.eta_max)
    cols = _phi_bin(phi[sel], spec.n_phi_hcal)
    np.add.at(native, (rows, cols), val[sel])
    image[Channel.HCAL] = upsample_hcal(native, spec)

    return FullDetectorImage(image.astype(np.float32), spec, n_dropped)


def upsample_hcal(native: np.ndarray, spec: GridSpec = GridSpec()) -> np.ndarray:
    """Replicate each tower value into its fine block (no energy splitting)."""
    expected = (spec.n_eta_hcal, spec.n_phi_hcal)
    if native.shape != expected:
        raise ValueError(f"native HCAL grid must be {expected}, got {native.shape}")
    f = spec.hcal_factor
    return np.repeat(np.repeat(native, f, axis=0), f, axis=1)


def find_window_center(image: FullDetectorImage, jet_eta: float, jet_phi: float) -> tuple[int, int]:
    """Hottest HCAL tower in the 9x9 neighborhood of the jet centroid tower.

    The neighborhood wraps in phi and truncates in eta. Ties between equal
    positive maxima go to the smallest (row, col); a fully empty neighborhood
    falls back to the centroid tower itself. Returns the tower-block center
    pixel in fine-grid coordinates.
    """
    spec = image.spec
    if not spec.eta_min <= jet_eta < spec.eta_max:
        raise ValueError(f"jet eta {jet_eta} outside the instrumented range")
    trow = int(_eta_bin(np.float64(jet_eta), spec.n_eta_hcal, spec.eta_min, spec.eta_max))
    tcol = int(_phi_bin(np.float64(jet_phi), spec.n_phi_hcal))

    hcal = image.hcal_native()
    best_energy = -1.0
    best = (trow, tcol)
    for r in range(max(0, trow - NEIGHBORHOOD_HALF),
                   min(spec.n_eta_hcal, trow + NEIGHBORHOOD_HALF + 1)):
        for dc in range(-NEIGHBORHOOD_HALF, NEIGHBORHOOD_HALF + 1):
            c = (tcol + dc) % spec.n_phi_hcal
            e = float(hcal[r, c])
            if e > best_energy or (e == best_energy and (r, c) < best):
                best_energy = e
                best = (r, c)
    if best_energy == 0.0:
        best = (trow, tcol)  # no deposit anywhere: keep the centroid tower

    half = spec.hcal_factor // 2
    return (best[0] * spec.hcal_factor + half, best[1] * spec.hcal_factor + half)


def crop_jet_window(image: FullDetectorImage, center: tuple[int, int]) -> JetWindow:
    """125x125 crop around ``center``; columns wrap modulo n_phi, rows must
    fit entirely inside the eta range."""
    row, col = center
    spec = image.spec
    if row < WINDOW_HALF or row > spec.n_eta - WINDOW_HALF - 1:
        raise EtaOutOfRange(f"window center row {row} leaves no room for a full crop")
    rows = slice(row - WINDOW_HALF, row + WINDOW_HALF + 1)
    cols = np.arange(col - WINDOW_HALF, col + WINDOW_HALF + 1) % spec.n_phi
    window = image.data[:, rows, :][:, :, cols]
    return JetWindow(np.ascontiguousarray(window, dtype=np.float32), row, col)
