# /wsgi.py
from app import create_app

# Production app: serves the runs API and hosts `flask --app wsgi sim ...`
app = create_app('Production')

if __name__ == "__main__":
    app.run()
