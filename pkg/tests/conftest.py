"""Shared fixtures: the 15-field product template and its reference record."""

import pytest

from tagnet.clock import SimClock
from tagnet.tagcodec import FieldDef, TagTemplate, VisualGroup

GENERAL = "General information"
SPECIFIC = "Specific information"


def make_product_template(template_id: int = 1, version: int = 1) -> TagTemplate:
    fields = [
        FieldDef("TAG_ID", "integer", 1),
        FieldDef("TAG_TYPE", "integer", 1),
        FieldDef("COMPONENTS_NUMBER", "integer", 1),
        FieldDef("ID_BD_0", "integer", 1),
        FieldDef("ID_BD_1", "integer", 1),
        FieldDef("ID_BD_2", "integer", 1),
        FieldDef("DISTRIBUTOR", "integer", 2),
        FieldDef("SHIPMENT_CO_ID", "integer", 2),
        FieldDef("TAG_DATE", "date", 2),
        FieldDef("EXPIRATION_DATE", "date", 2),
        FieldDef("INCOMING_DAY", "date", 2),
        FieldDef("RECEPTIONIST_ID", "integer", 2),
        FieldDef("PRODUCT_ACCEPTED", "integer", 2),
        FieldDef("PRODUCT_PRICE", "integer", 2),
        FieldDef("PRODUCT_QUANTITY", "integer", 2),
    ]
    groups = (VisualGroup(1, GENERAL), VisualGroup(2, SPECIFIC))
    return TagTemplate(template_id=template_id, version=version,
                       name="PRODUCT_V1", fields=tuple(fields), groups=groups)


# The reference record: an assembly 298 built from parts 202, 305 and 423,
# tagged on 3/15/2007 9:01 UTC, priced 25000, quantity 1.
REFERENCE_RECORD = {
    "TAG_ID": 298,
    "TAG_TYPE": 1,
    "COMPONENTS_NUMBER": 3,
    "ID_BD_0": 202,
    "ID_BD_1": 305,
    "ID_BD_2": 423,
    "DISTRIBUTOR": 81,
    "SHIPMENT_CO_ID": 60,
    "TAG_DATE": 1173949260,
    "EXPIRATION_DATE": 946684800,
    "INCOMING_DAY": 946684800,
    "RECEPTIONIST_ID": 24,
    "PRODUCT_ACCEPTED": 1,
    "PRODUCT_PRICE": 25000,
    "PRODUCT_QUANTITY": 1,
}


def make_mini_scenario(steps: list | None = None) -> dict:
    """Two-enterprise world (client RG1 IN, supplier SG1 OUT) with two blank tags."""
    from tagnet.tagcodec import template_to_dict
    return {
        "name": "mini", "seed": 7, "start_epoch": 1_173_949_200,
        "world": {
            "templates": [template_to_dict(make_product_template())],
            "enterprises": [
                {"id": "client", "gates": [
                    {"id": "RG1", "tier": "MCCG", "slave_addr": 1,
                     "direction": "IN", "department": "receiving"}]},
                {"id": "supplier", "gates": [
                    {"id": "SG1", "tier": "MCCG", "slave_addr": 1,
                     "direction": "OUT", "department": "shipping"}]},
            ],
            "tags": [{"uid": 9001}, {"uid": 9202}],
        },
        "steps": steps or [],
    }


@pytest.fixture
def product_template() -> TagTemplate:
    return make_product_template()


@pytest.fixture
def reference_record() -> dict:
    return dict(REFERENCE_RECORD)


@pytest.fixture
def clock() -> SimClock:
    return SimClock(start_ms=1_173_949_200_000)
