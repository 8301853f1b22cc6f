"""
EdgeFLow Simulator REST API

aiohttp server exposing experiment runs, sweeps, topology reports, job
tracking and log streaming.
Start with: python edgeflow_app.py api
"""
