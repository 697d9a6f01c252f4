import numpy as np
import pytest

from radiomap.antenna import isotropic_pattern
from radiomap.channel import Channel, SampleSet, TwoRayParams
from radiomap.correlation import CorrelationModel
from radiomap.geo import GeoPoint, LocalFrame


@pytest.fixture(scope="session")
def model():
    return CorrelationModel(a=0.6, p1=0.03, p2=0.004, q=0.03, sigma_w_sq=16.0)


@pytest.fixture(scope="session")
def frame():
    return LocalFrame.at(GeoPoint(40.0, -105.0, 0.0))


@pytest.fixture(scope="session")
def channel(frame):
    bs_lat, bs_lon = frame.from_local_xy(-150.0, -150.0)
    params = TwoRayParams(wavelength_m=0.23, tx_power_db=30.0,
                          bs=GeoPoint(float(bs_lat), float(bs_lon), 10.0))
    return Channel.isotropic(params)


def make_samples(frame, xy, heights, values):
    """SampleSet from local metric coordinates with given rsrp values."""
    xy = np.asarray(xy, dtype=float)
    lat, lon = frame.from_local_xy(xy[:, 0], xy[:, 1])
    return SampleSet(lat, lon, np.broadcast_to(heights, (xy.shape[0],)).astype(float), values)


@pytest.fixture
def samples_builder(frame):
    def build(xy, heights=100.0, values=None):
        xy = np.asarray(xy, dtype=float)
        if values is None:
            values = np.zeros(xy.shape[0])
        return make_samples(frame, xy, heights, values)

    return build
