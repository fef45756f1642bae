"""
Pytest fixtures and configuration for testing.
"""
import copy
import json
import os
from pathlib import Path

import pytest

# Set environment variables for testing
os.environ['GFCSIM_THREADS'] = '1'
os.environ['GFCSIM_LOG_LEVEL'] = 'WARNING'
os.environ['GFCSIM_SCENARIO_DIR'] = str(Path(__file__).resolve().parents[1] / 'scenarios')

from core.controllers import (  # noqa: E402
    Droop,
    Dvoc,
    InnerLoopConfig,
    OuterControllerConfig,
    Setpoints,
    Vsg,
)
from core.converter import ConverterParams  # noqa: E402
from core.engine import GfcConfig, Scenario  # noqa: E402
from core.network import network_from_dict  # noqa: E402

REPO_ROOT = Path(__file__).resolve().parents[1]

TWO_BUS_NETWORK = {
    'buses': {'1': {'b_shunt': 0.05}, '2': {'b_shunt': 0.05}},
    'lines': {'1-2': {'from': 1, 'to': 2, 'r': 0.01, 'x': 0.1, 'b': 0.05}},
    'loads': {'ld2': {'bus': 2, 'p': 0.3, 'q': 0.1}},
    'machines': {'sm1': {'bus': 1}},
    'gfcs': {'gfc1': {'bus': 2}},
}


@pytest.fixture
def scenario_dir():
    """Directory of the shipped scenarios."""
    return REPO_ROOT / 'scenarios'


@pytest.fixture
def two_bus_network_data():
    """A machine bus and a converter bus joined by one line, with a load at the converter."""
    return copy.deepcopy(TWO_BUS_NETWORK)


@pytest.fixture
def two_bus_network(two_bus_network_data):
    return network_from_dict(two_bus_network_data)


@pytest.fixture
def converter_params():
    return ConverterParams()


@pytest.fixture
def setpoints():
    return Setpoints(p_ref=0.25, q_ref=0.0, v_ref=1.0)


@pytest.fixture
def droop_controller(setpoints):
    return OuterControllerConfig(kind=Droop(), alpha=0.5, setpoints=setpoints)


@pytest.fixture
def vsg_controller(setpoints):
    return OuterControllerConfig(kind=Vsg(), alpha=0.5, setpoints=setpoints)


@pytest.fixture
def dvoc_controller(setpoints):
    return OuterControllerConfig(kind=Dvoc(), alpha=0.5, setpoints=setpoints)


def make_scenario(network, controller, events=(), t_end=0.02, preroll=0.0, inner_loop=None, name='two_bus'):
    gfc = GfcConfig(
        name='gfc1',
        bus='2',
        converter=ConverterParams(),
        controller=controller,
        inner_loop=inner_loop or InnerLoopConfig(),
    )
    return Scenario(name=name, network=network, gfcs=[gfc], events=list(events),
                    t_end=t_end, dt=20e-6, log_decimation=10, preroll=preroll)


@pytest.fixture
def scenario_factory():
    """Build a one-converter scenario: factory(network, controller, events=(), t_end=0.02, ...)."""
    return make_scenario


@pytest.fixture
def two_bus_scenario(two_bus_network, vsg_controller):
    """VSG converter on the two-bus system, no events, 20 ms horizon."""
    return make_scenario(two_bus_network, vsg_controller)


@pytest.fixture
def scenario_tree(two_bus_network_data):
    """A small scenario file body with an embedded network and one load step."""
    return {
        'name': 'two_bus_step',
        'description': 'Two-bus test case',
        'network': two_bus_network_data,
        'simulation': {'t_end': 0.01, 'dt': 2e-05, 'log_decimation': 10, 'preroll': 0.0},
        'gfc_defaults': {
            'controller': {
                'kind': 'vsg',
                'alpha': 0.5,
            },
        },
        'events': [{'t_event': 0.005, 'bus': '2', 'p_before': 0.3, 'p_after': 0.35}],
        'provenance': {'events.0.*': 'paper'},
    }


@pytest.fixture
def scenario_file(tmp_path, scenario_tree):
    """The small scenario written to disk."""
    path = tmp_path / 'two_bus_step.json'
    path.write_text(json.dumps(scenario_tree, indent=2), encoding='utf-8')
    return path
