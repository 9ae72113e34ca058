from enum import Enum


class NyisoZone(str, Enum):
    """
    Enum representing the 11 NYISO load zones, in their lettered order A to K.

    The value is the zone code as it appears in NYISO load feeds.
    """
    WEST = "WEST"
    GENESE = "GENESE"
    CENTRL = "CENTRL"
    NORTH = "NORTH"
    MHK_VL = "MHK VL"
    CAPITL = "CAPITL"
    HUD_VL = "HUD VL"
    MILLWD = "MILLWD"
    DUNWOD = "DUNWOD"
    NYC = "N.Y.C."
    LONGIL = "LONGIL"

    @property
    def bus(self) -> int:
        """IEEE-14 load bus this zone is mapped onto."""
        return ZONE_TO_BUS[self]

    @classmethod
    def parse(cls, code: str) -> "NyisoZone":
        """Accepts either the feed code ("N.Y.C.") or the member name ("NYC")."""
        try:
            return cls(code)
        except ValueError:
            pass
        try:
            return cls[code.strip().upper().replace(" ", "_")]
        except KeyError:
            raise ValueError(f"Unknown NYISO zone {code!r}") from None


ZONE_TO_BUS = {
    NyisoZone.WEST: 2,
    NyisoZone.GENESE: 3,
    NyisoZone.CENTRL: 4,
    NyisoZone.NORTH: 5,
    NyisoZone.MHK_VL: 6,
    NyisoZone.CAPITL: 9,
    NyisoZone.HUD_VL: 10,
    NyisoZone.MILLWD: 11,
    NyisoZone.DUNWOD: 12,
    NyisoZone.NYC: 13,
    NyisoZone.LONGIL: 14,
}

BUS_TO_ZONE = {bus: zone for zone, bus in ZONE_TO_BUS.items()}
