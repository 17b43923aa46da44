"""Constants registry and schema validation."""

import pytest

from olorawan.constants import (
    ConstantsError,
    load_constants,
    schema_ids,
    validate_schemas,
)


def test_load_twice_identical():
    assert load_constants() is load_constants()
    assert load_constants() == load_constants()


def test_every_constant_has_source_tag(registry):
    for path in registry.paths():
        assert registry.source_of(path) in ("paper", "decision")


def test_paper_tagged_values(registry):
    # values the interface tables fix outright
    assert registry.source_of("radio.tx_power_min_dbm") == "paper"
    assert registry.source_of("radio.tx_power_max_dbm") == "paper"
    assert registry.source_of("fronthaul.lorawan_section_type") == "paper"
    assert registry.source_of("timing.near_rt_min_s") == "paper"
    assert registry.lorawan_section_type == 0x09
    assert registry.near_rt_band_s == (0.010, 1.0)
    assert (registry.tx_power_min_dbm, registry.tx_power_max_dbm) == (2, 20)


def test_sf_tables_total(registry):
    for sf in range(7, 13):
        registry.required_snr_db(sf)
        registry.max_app_payload(sf)
        for other in range(7, 13):
            if other != sf:
                registry.cross_sf_rejection_db(sf, other)


def test_required_snr_frozen_values(registry):
    assert registry.required_snr_db(12) == -20.0
    assert registry.required_snr_db(7) == -7.5


def test_same_sf_rejection_is_capture_rule(registry):
    with pytest.raises(ConstantsError):
        registry.cross_sf_rejection_db(9, 9)


def test_current_table_interpolation(registry):
    assert registry.tx_current_ma(14) == 47
    assert registry.tx_current_ma(15) == pytest.approx((47 + 58) / 2)
    with pytest.raises(ConstantsError):
        registry.tx_current_ma(25)


def test_sub_band_lookup(registry):
    assert registry.sub_band_of(868100000) == "g1"
    assert registry.sub_band_of(869525000) == "g3"
    with pytest.raises(ConstantsError):
        registry.sub_band_of(2400000000)


def test_unknown_constant_path(registry):
    with pytest.raises(ConstantsError):
        registry.get("nope.nothing")


def test_validate_schemas_deterministic():
    doc = {"min_sf": 6, "max_sf": 13}
    first = validate_schemas(doc, "a1/SF_BOUNDS")
    assert first == validate_schemas(doc, "a1/SF_BOUNDS")
    assert len(first) == 2


def test_validate_schemas_unknown_id():
    with pytest.raises(ConstantsError):
        validate_schemas({}, "no/such-schema")


def test_schema_ids_cover_interfaces():
    ids = schema_ids()
    for needed in ("a1/SF_BOUNDS", "a1/ENERGY_SAVING", "a1/PRIORITIZATION",
                   "o1/du", "o1/ru", "o1/ns", "netsim/scenario"):
        assert needed in ids
