"""Collect and register all API route modules."""
from api.routes.status import setup as setup_status
from api.routes.experiments import setup as setup_experiments
from api.routes.jobs_routes import setup as setup_jobs
from api.routes.logs import setup as setup_logs


def setup_routes(app):
    """Register all route modules with the app."""
    setup_status(app)
    setup_experiments(app)
    setup_jobs(app)
    setup_logs(app)
