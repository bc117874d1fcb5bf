"""Retrieval of Sentinel-2 metadata documents referenced by STAC items."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable
from urllib.parse import urljoin, urlparse
from urllib.request import url2pathname

import requests

from .errors import HttpError, MalformedItem, NoMetadataAsset
from .metadata import parse_baseline, parse_product_metadata

log = logging.getLogger(__name__)

GRANULE_KEYS = ("granule-metadata", "granule_metadata", "metadata")
PRODUCT_KEYS = ("product-metadata", "product_metadata")
BASELINE_PROPERTY = "s2:processing_baseline"
RETRIES = 3
BACKOFF_S = (1.0, 2.0, 4.0)
TIMEOUT_S = 30.0


@dataclass(frozen=True)
class StacMetadata:
    tile_xml: bytes
    processing_baseline: float
    product_xml: bytes | None = None
    item_id: str = ""


def is_url(source) -> bool:
    return urlparse(str(source)).scheme in ("http", "https")


def _local_path(href: str) -> Path:
    parsed = urlparse(href)
    if parsed.scheme == "file":
        return Path(url2pathname(parsed.path))
    return Path(href)


def fetch_bytes(
    href: str,
    *,
    session: requests.Session | None = None,
    retries: int = RETRIES,
    backoff: tuple[float, ...] = BACKOFF_S,
    timeout: float = TIMEOUT_S,
    sleep: Callable[[float], None] | None = None,
) -> bytes:
    """GET ``href`` with retries on connection errors, timeouts, 429 and 5xx.

    Other 4xx responses fail at once. Local paths and ``file://`` URLs are read
    from disk.
    """
    if not is_url(href):
        try:
            return _local_path(href).read_bytes()
        except OSError as exc:
            raise HttpError(f"{href}: {exc}") from exc

    http = session or requests
    if sleep is None:
        sleep = time.sleep
    last = ""
    for attempt in range(retries + 1):
        if attempt:
            delay = backoff[min(attempt - 1, len(backoff) - 1)]
            log.warning("retrying %s in %.1fs (%s)", href, delay, last)
            sleep(delay)
        try:
            resp = http.get(href, timeout=timeout)
        except (requests.ConnectionError, requests.Timeout) as exc:
            last = f"{type(exc).__name__}: {exc}"
            continue
        if resp.status_code == 429 or resp.status_code >= 500:
            last = f"HTTP {resp.status_code}"
            continue
        if resp.status_code >= 400:
            raise HttpError(f"{href}: HTTP {resp.status_code}")
        return resp.content
    raise HttpError(f"{href}: giving up after {retries} retries ({last})")


def _asset_href(item: dict, keys: tuple[str, ...], base: str | None) -> str | None:
    assets = item["assets"]
    for key in keys:
        asset = assets.get(key)
        if isinstance(asset, dict) and asset.get("href"):
            href = asset["href"]
            if base and not is_url(href) and not Path(href).is_absolute() and not href.startswith("file:"):
                href = urljoin(base, href) if is_url(base) else str(Path(base).parent / href)
            return href
    return None


def _self_href(item: dict) -> str | None:
    for link in item.get("links") or []:
        if isinstance(link, dict) and link.get("rel") == "self":
            return link.get("href")
    return None


def fetch_stac_metadata(
    item: dict, *, base: str | None = None, baseline: float | None = None, **http
) -> StacMetadata:
    """Download the granule metadata referenced by a STAC item.

    The baseline is ``baseline`` when the caller supplies one, else the
    ``s2:processing_baseline`` property, else the product metadata asset. ``base`` resolves
    relative asset hrefs (defaults to the item's ``self`` link). Extra keyword
    arguments go to :func:`fetch_bytes`.
    """
    if not isinstance(item, dict) or not isinstance(item.get("assets"), dict):
        raise MalformedItem("STAC item must be an object with an 'assets' map")
    base = base or _self_href(item)
    item_id = str(item.get("id", ""))

    tile_href = _asset_href(item, GRANULE_KEYS, base)
    if tile_href is None:
        raise NoMetadataAsset(
            f"item {item_id!r} has none of the metadata assets {', '.join(GRANULE_KEYS)}"
        )

    props = item.get("properties") or {}
    if not isinstance(props, dict):
        raise MalformedItem("'properties' must be an object")
    product_xml = None
    if baseline is None and props.get(BASELINE_PROPERTY) is not None:
        baseline = parse_baseline(str(props[BASELINE_PROPERTY]))
    elif baseline is None:
        product_href = _asset_href(item, PRODUCT_KEYS, base)
        if product_href is None:
            raise NoMetadataAsset(
                f"item {item_id!r} has no {BASELINE_PROPERTY} property and none of the assets "
                + ", ".join(PRODUCT_KEYS)
            )
        product_xml = fetch_bytes(product_href, **http)
        baseline = parse_product_metadata(product_xml)

    return StacMetadata(fetch_bytes(tile_href, **http), baseline, product_xml, item_id)


def load_stac_item(source, **http) -> dict:
    raw = fetch_bytes(str(source), **http)
    try:
        return json.loads(raw)
    except json.JSONDecodeError as exc:
        raise MalformedItem(f"{source}: {exc}") from exc
