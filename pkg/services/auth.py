"""HTTP basic auth for the runs API; users come from the USERS environment variable (JSON object)."""
import hmac
import logging

from flask import current_app
from flask_httpauth import HTTPBasicAuth


logger = logging.getLogger(__name__)

auth = HTTPBasicAuth()


@auth.verify_password
def verify_password(username, password):
    users = current_app.config.get("USERS") or {}
    expected = users.get(username)
    if expected is not None and hmac.compare_digest(str(expected), str(password)):
        return username
    if username:
        logger.info("rejected credentials for %r", username)
    return None
