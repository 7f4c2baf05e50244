"""Offroad digital-twin simulator with an automated verification and validation harness."""
